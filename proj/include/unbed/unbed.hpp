// Umbrella header.
#pragma once

#include "unbed/bootstrap.hpp"
#include "unbed/checkpoint.hpp"
#include "unbed/core.hpp"
#include "unbed/corpus.hpp"
#include "unbed/crf.hpp"
#include "unbed/datagen.hpp"
#include "unbed/encoder.hpp"
#include "unbed/eval.hpp"
#include "unbed/model.hpp"
#include "unbed/report.hpp"
#include "unbed/selection.hpp"
#include "unbed/tagging.hpp"
#include "unbed/uncertainty.hpp"
#include "unbed/variants.hpp"
