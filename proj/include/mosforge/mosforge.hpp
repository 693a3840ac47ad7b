#pragma once

#include "mosforge/common.hpp"
#include "mosforge/corpus.hpp"
#include "mosforge/ensemble.hpp"
#include "mosforge/featureio.hpp"
#include "mosforge/gbm.hpp"
#include "mosforge/metrics.hpp"
#include "mosforge/nn.hpp"
