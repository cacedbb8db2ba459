#pragma once

#include "noisylab/augment.hpp"
#include "noisylab/checkpoint.hpp"
#include "noisylab/config.hpp"
#include "noisylab/dataset.hpp"
#include "noisylab/error.hpp"
#include "noisylab/experiment.hpp"
#include "noisylab/gradcheck.hpp"
#include "noisylab/losses.hpp"
#include "noisylab/metrics.hpp"
#include "noisylab/network.hpp"
#include "noisylab/noise.hpp"
#include "noisylab/optim.hpp"
#include "noisylab/random.hpp"
#include "noisylab/strategies.hpp"
#include "noisylab/tensor.hpp"
#include "noisylab/presets.hpp"
#include "noisylab/gradcheck_suite.hpp"
