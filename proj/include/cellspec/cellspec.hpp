#pragma once

#include "cellspec/error.hpp"
#include "cellspec/text.hpp"
#include "cellspec/digest.hpp"
#include "cellspec/parallel.hpp"
#include "cellspec/citation.hpp"
#include "cellspec/prompts.hpp"
#include "cellspec/gateway.hpp"
#include "cellspec/corpus.hpp"
#include "cellspec/retrieval.hpp"
#include "cellspec/specgraph.hpp"
#include "cellspec/metrics.hpp"
#include "cellspec/bench.hpp"
#include "cellspec/manifest.hpp"
#include "cellspec/mock_model.hpp"
