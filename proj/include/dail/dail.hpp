#pragma once

#include "dail/errors.hpp"
#include "dail/rng.hpp"
#include "dail/gridworld.hpp"
#include "dail/dataset.hpp"
#include "dail/tensor.hpp"
#include "dail/distributional.hpp"
#include "dail/network.hpp"
#include "dail/alignment.hpp"
#include "dail/evaluation.hpp"
#include "dail/agent.hpp"
#include "dail/analysis.hpp"
#include "dail/config.hpp"
#include "dail/plot.hpp"
