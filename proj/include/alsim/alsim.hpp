#pragma once

#include "alsim/analysis.hpp"
#include "alsim/common.hpp"
#include "alsim/confidence.hpp"
#include "alsim/data.hpp"
#include "alsim/learner.hpp"
#include "alsim/losses.hpp"
#include "alsim/run.hpp"
#include "alsim/simulator.hpp"
#include "alsim/strategy.hpp"
