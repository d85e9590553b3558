#pragma once

#include "pfda/error.hpp"
#include "pfda/linalg.hpp"
#include "pfda/rng.hpp"
#include "pfda/parallel.hpp"
#include "pfda/model.hpp"
#include "pfda/models/linear_gaussian.hpp"
#include "pfda/models/lorenz96.hpp"
#include "pfda/models/stochastic_volatility.hpp"
#include "pfda/simulate.hpp"
#include "pfda/resample.hpp"
#include "pfda/trajectory_store.hpp"
#include "pfda/particle_filter.hpp"
#include "pfda/auxiliary.hpp"
#include "pfda/enkf.hpp"
#include "pfda/smooth.hpp"
#include "pfda/pmcmc.hpp"
#include "pfda/oracle.hpp"
