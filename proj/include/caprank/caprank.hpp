#pragma once

#include "caprank/assignment.hpp"
#include "caprank/capacity.hpp"
#include "caprank/gbm.hpp"
#include "caprank/harness.hpp"
#include "caprank/matrix.hpp"
#include "caprank/metrics.hpp"
#include "caprank/objectives.hpp"
#include "caprank/tasks.hpp"
