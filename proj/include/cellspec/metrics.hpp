#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cellspec/citation.hpp"
#include "cellspec/error.hpp"

namespace cellspec {

/// F1 of the positive class; 0 when precision + recall is 0.
inline double binary_f1(const std::vector<bool>& predictions, const std::vector<bool>& golds) {
  if (predictions.size() != golds.size()) {
    throw Error(ErrorCode::LengthMismatch, "binary_f1: " + std::to_string(predictions.size()) + " predictions vs " +
                                               std::to_string(golds.size()) + " golds");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (predictions[i] && golds[i]) ++tp;
    else if (predictions[i]) ++fp;
    else if (golds[i]) ++fn;
  }
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * p * r / (p + r);
}

struct MultilabelF1 {
  double micro = 0.0;
  double macro = 0.0;
};

/// Micro and macro F1 over instances whose gold set is non-empty. Both are
/// taken over the categories that occur in those gold sets; a predicted
/// category that never occurs in gold is not scored.
inline MultilabelF1 multilabel_f1(const std::vector<std::set<std::string>>& predictions,
                                  const std::vector<std::set<std::string>>& golds) {
  if (predictions.size() != golds.size()) {
    throw Error(ErrorCode::LengthMismatch, "multilabel_f1: " + std::to_string(predictions.size()) +
                                               " predictions vs " + std::to_string(golds.size()) + " golds");
  }
  std::set<std::string> categories;
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i].empty()) continue;
    kept.push_back(i);
    categories.insert(golds[i].begin(), golds[i].end());
  }
  if (kept.empty()) throw Error(ErrorCode::NoPositiveInstances, "no instance has a gold category");

  std::size_t tp = 0, fp = 0, fn = 0;
  double macro_sum = 0.0;
  for (const auto& c : categories) {
    std::size_t ctp = 0, cfp = 0, cfn = 0;
    for (auto i : kept) {
      const bool p = predictions[i].count(c) > 0, g = golds[i].count(c) > 0;
      if (p && g) ++ctp;
      else if (p) ++cfp;
      else if (g) ++cfn;
    }
    tp += ctp;
    fp += cfp;
    fn += cfn;
    macro_sum += 2.0 * static_cast<double>(ctp) / static_cast<double>(2 * ctp + cfp + cfn);
  }
  MultilabelF1 out;
  out.micro = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  out.macro = macro_sum / static_cast<double>(categories.size());
  return out;
}

/// Evidence completeness. Default: every gold label is covered by some
/// predicted label (a superset of gold is correct). Strict: the canonical
/// label sets are equal. An empty gold set is covered by any prediction in
/// the default mode; negative controls are scored separately.
inline bool score_evidence(const std::vector<std::string>& predicted, const std::vector<std::string>& gold,
                           bool strict = false) {
  if (strict) {
    std::set<std::string> p, g;
    for (const auto& l : predicted) p.insert(text::lower_ascii(canonicalize_label(l)));
    for (const auto& l : gold) g.insert(text::lower_ascii(canonicalize_label(l)));
    return p == g;
  }
  for (const auto& g : gold) {
    bool covered = false;
    for (const auto& p : predicted) {
      if (label_covers(p, g)) {
        covered = true;
        break;
      }
    }
    if (!covered) return false;
  }
  return true;
}

}  // namespace cellspec
