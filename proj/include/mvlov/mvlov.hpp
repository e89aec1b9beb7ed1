#pragma once

#include "mvlov/common.hpp"
#include "mvlov/density.hpp"
#include "mvlov/experiment.hpp"
#include "mvlov/fpe.hpp"
#include "mvlov/grid.hpp"
#include "mvlov/io.hpp"
#include "mvlov/kernels.hpp"
#include "mvlov/metrics.hpp"
#include "mvlov/particles.hpp"
#include "mvlov/rng.hpp"
