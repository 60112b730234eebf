#pragma once

// In-process equivalent of `ingest`, `index` and `kg` over the mini corpus,
// with the bundled mock model.

#include <memory>

#include "cellspec/cellspec.hpp"
#include "support.hpp"

namespace testsupport {

struct PipelineFixture {
  std::unique_ptr<cellspec::Gateway> gw;
  cellspec::ComponentSpace space;
  cellspec::HybridIndex chunk_index;
  cellspec::HybridIndex kg_index;
  std::vector<std::pair<cellspec::SpecGraph, cellspec::KgBlock>> blocks;

  cellspec::PipelineResources resources() const { return {&space, &chunk_index, &kg_index}; }
};

inline std::unique_ptr<cellspec::Gateway> mock_gateway() {
  cellspec::GatewayConfig cfg;
  cfg.mode = cellspec::TransportMode::mock;
  auto gw = std::make_unique<cellspec::Gateway>(cfg);
  cellspec::mock::install(*gw);
  return gw;
}

inline const PipelineFixture& pipeline_fixture() {
  static const PipelineFixture f = [] {
    using namespace cellspec;
    PipelineFixture p;
    p.gw = mock_gateway();
    p.space = assemble_component_space(load_corpus(fixtures() / "mini_corpus"), *p.gw);
    p.chunk_index = build_index(p.space, RetrievalConfig{});
    for (const auto& comps : components_by_clause(p.space)) {
      if (comps.front().clause_id == kPreambleClauseId) continue;
      const auto key = title_key(comps.front().spec_id, comps.front().clause_id);
      const std::string title = p.space.clause_titles.count(key) ? p.space.clause_titles.at(key) : "";
      auto g = extract_graph(comps, title, *p.gw);
      auto b = render_kg_block(g, clause_text_of(comps));
      p.blocks.emplace_back(std::move(g), std::move(b));
    }
    p.kg_index = build_kg_index(p.blocks, RetrievalConfig{});
    return p;
  }();
  return f;
}

inline std::vector<cellspec::TaskInstance> fixture_tasks() {
  return cellspec::load_tasks(fixtures() / "tasks.jsonl", std::nullopt, cellspec::CountCheck::none).tasks;
}

inline const cellspec::TaskInstance& task_by_id(const std::vector<cellspec::TaskInstance>& tasks,
                                                const std::string& id) {
  for (const auto& t : tasks)
    if (t.task_id == id) return t;
  throw std::runtime_error("no fixture task " + id);
}

}  // namespace testsupport
