#pragma once

#include "more/config.hpp"
#include "more/depthprior.hpp"
#include "more/error.hpp"
#include "more/eval/alignment.hpp"
#include "more/eval/metrics.hpp"
#include "more/gradcheck.hpp"
#include "more/io/formats.hpp"
#include "more/io/tensor_file.hpp"
#include "more/linalg.hpp"
#include "more/losses.hpp"
#include "more/maps.hpp"
#include "more/moe.hpp"
#include "more/numeric.hpp"
#include "more/report.hpp"
#include "more/stability.hpp"
#include "more/synth.hpp"
#include "more/train.hpp"
