#pragma once

// Umbrella header.

#include "lsilab/config.hpp"
#include "lsilab/core.hpp"
#include "lsilab/cox.hpp"
#include "lsilab/eta.hpp"
#include "lsilab/fp_counting.hpp"
#include "lsilab/fp_general.hpp"
#include "lsilab/io.hpp"
#include "lsilab/li_model.hpp"
#include "lsilab/parallel.hpp"
#include "lsilab/rng.hpp"
#include "lsilab/runner.hpp"
#include "lsilab/stats.hpp"
#include "lsilab/verify.hpp"
