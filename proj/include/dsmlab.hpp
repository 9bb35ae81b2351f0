// dsmlab.hpp
//
// Umbrella header: analytic core, score models, objectives, optimization
// loops and the experiment scenarios.

#pragma once

#include "dsmlab/analytic.hpp"
#include "dsmlab/checkpoint.hpp"
#include "dsmlab/core.hpp"
#include "dsmlab/estimate.hpp"
#include "dsmlab/families.hpp"
#include "dsmlab/objectives.hpp"
#include "dsmlab/optimization.hpp"
#include "dsmlab/params.hpp"
#include "dsmlab/quadrature.hpp"
#include "dsmlab/random.hpp"
#include "dsmlab/score_models.hpp"
#include "dsmlab/experiments/run.hpp"
