#pragma once

// Umbrella header for the library and the experiment harness.

#include "awt/analysis.hpp"
#include "awt/attacks.hpp"
#include "awt/data.hpp"
#include "awt/harness/checkpoint.hpp"
#include "awt/harness/config.hpp"
#include "awt/harness/datasets.hpp"
#include "awt/harness/errors.hpp"
#include "awt/harness/metrics_io.hpp"
#include "awt/harness/run.hpp"
#include "awt/kernels.hpp"
#include "awt/network.hpp"
#include "awt/numerics.hpp"
#include "awt/optim.hpp"
#include "awt/ticket.hpp"
#include "awt/training.hpp"
