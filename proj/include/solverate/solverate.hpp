#pragma once

#include "solverate/config.hpp"
#include "solverate/estimators.hpp"
#include "solverate/harness.hpp"
#include "solverate/numeric.hpp"
#include "solverate/parallel.hpp"
#include "solverate/report.hpp"
#include "solverate/rng.hpp"
#include "solverate/stats.hpp"
#include "solverate/task_model.hpp"
