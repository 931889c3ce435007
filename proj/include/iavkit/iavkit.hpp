#pragma once

#include "iavkit/attribution.hpp"
#include "iavkit/bundle.hpp"
#include "iavkit/error.hpp"
#include "iavkit/metrics.hpp"
#include "iavkit/npy.hpp"
#include "iavkit/perturbation.hpp"
#include "iavkit/report.hpp"
#include "iavkit/stats.hpp"
#include "iavkit/svg.hpp"
#include "iavkit/tensor.hpp"
#include "iavkit/tsne.hpp"
#include "iavkit/vit.hpp"
