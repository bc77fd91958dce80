#pragma once

#include "dma/common.hpp"
#include "dma/config.hpp"
#include "dma/distill.hpp"
#include "dma/experiment.hpp"
#include "dma/featurize.hpp"
#include "dma/feedback.hpp"
#include "dma/metrics.hpp"
#include "dma/orchestrator.hpp"
#include "dma/policy.hpp"
#include "dma/ppo.hpp"
#include "dma/rng.hpp"
#include "dma/scorers.hpp"
#include "dma/simulator.hpp"
#include "dma/trainers.hpp"
