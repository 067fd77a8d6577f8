#pragma once

// Umbrella header: federated multiple-instance learning simulator with
// quality-diversity (k-DPP) client selection.

#include "fedmil/bag_io.hpp"
#include "fedmil/dataset.hpp"
#include "fedmil/errors.hpp"
#include "fedmil/experiment.hpp"
#include "fedmil/federation.hpp"
#include "fedmil/linalg.hpp"
#include "fedmil/metrics.hpp"
#include "fedmil/mnist.hpp"
#include "fedmil/model.hpp"
#include "fedmil/partition.hpp"
#include "fedmil/rng.hpp"
#include "fedmil/selection.hpp"
