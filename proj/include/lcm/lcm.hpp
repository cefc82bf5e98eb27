#pragma once

#include "lcm/asymptotics.hpp"
#include "lcm/chi2.hpp"
#include "lcm/divergence.hpp"
#include "lcm/estimation.hpp"
#include "lcm/inference.hpp"
#include "lcm/io.hpp"
#include "lcm/model.hpp"
#include "lcm/montecarlo.hpp"
#include "lcm/optimize.hpp"
#include "lcm/rng.hpp"
