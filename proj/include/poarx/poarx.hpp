#pragma once

#include "poarx/commands.hpp"
#include "poarx/copula.hpp"
#include "poarx/dists.hpp"
#include "poarx/errors.hpp"
#include "poarx/estimation.hpp"
#include "poarx/evaluation.hpp"
#include "poarx/forecasting.hpp"
#include "poarx/io.hpp"
#include "poarx/model.hpp"
#include "poarx/random.hpp"
#include "poarx/simulation.hpp"
