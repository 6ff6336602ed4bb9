#pragma once

#include "wce/chaos.hpp"
#include "wce/config.hpp"
#include "wce/enkf.hpp"
#include "wce/error.hpp"
#include "wce/estimator.hpp"
#include "wce/experiment.hpp"
#include "wce/io.hpp"
#include "wce/noise.hpp"
#include "wce/parallel.hpp"
#include "wce/rng.hpp"
#include "wce/sde_propagator.hpp"
#include "wce/spde_propagator.hpp"
#include "wce/stages.hpp"
#include "wce/tensor.hpp"
#include "wce/timebasis.hpp"
