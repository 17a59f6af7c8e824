// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dualsft/autodiff.hpp"
#include "dualsft/certificates.hpp"
#include "dualsft/checkpoint.hpp"
#include "dualsft/cwsd.hpp"
#include "dualsft/data.hpp"
#include "dualsft/diagnostics.hpp"
#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"
#include "dualsft/metrics.hpp"
#include "dualsft/objectives.hpp"
#include "dualsft/optimizer.hpp"
#include "dualsft/parameter_vector.hpp"
#include "dualsft/pipeline.hpp"
#include "dualsft/report.hpp"
#include "dualsft/scoring.hpp"
#include "dualsft/shapley.hpp"
#include "dualsft/surrogate.hpp"
#include "dualsft/tensor_core.hpp"
#include "dualsft/toy_models.hpp"
