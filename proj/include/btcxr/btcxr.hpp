#pragma once

#include "btcxr/barlow.hpp"
#include "btcxr/core.hpp"
#include "btcxr/error.hpp"
#include "btcxr/lineval.hpp"
#include "btcxr/manifest.hpp"
#include "btcxr/metrics.hpp"
#include "btcxr/report.hpp"
#include "btcxr/rng.hpp"
#include "btcxr/stratify.hpp"
#include "btcxr/wbf.hpp"
