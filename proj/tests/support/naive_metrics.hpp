#pragma once

// Straight-line reimplementations of the metric definitions, kept
// deliberately dumb and separate from core so the two can disagree.

#include <algorithm>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace naive {

inline double accuracy(const std::vector<int>& pred,
                       const std::vector<int>& gold) {
  int hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    if (pred[i] == gold[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

using Entity = std::tuple<std::string, int, int>;  // type, start, end

inline std::vector<Entity> entities(std::vector<std::string> bio) {
  for (std::size_t i = 0; i < bio.size(); ++i) {
    if (bio[i].rfind("I-", 0) != 0) continue;
    const std::string type = bio[i].substr(2);
    const bool open = i > 0 && (bio[i - 1] == "B-" + type ||
                                bio[i - 1] == "I-" + type);
    if (!open) bio[i] = "B-" + type;
  }
  std::vector<Entity> out;
  for (std::size_t i = 0; i < bio.size(); ++i) {
    if (bio[i].rfind("B-", 0) != 0) continue;
    const std::string type = bio[i].substr(2);
    std::size_t j = i;
    while (j + 1 < bio.size() && bio[j + 1] == "I-" + type) ++j;
    out.emplace_back(type, static_cast<int>(i), static_cast<int>(j));
  }
  return out;
}

inline double entity_f1(const std::vector<std::string>& pred,
                        const std::vector<std::string>& gold) {
  auto pe = entities(pred);
  auto ge = entities(gold);
  if (pe.empty() && ge.empty()) return 1.0;
  const int n_pred = static_cast<int>(pe.size());
  const int n_gold = static_cast<int>(ge.size());
  int matched = 0;
  for (const auto& e : pe) {
    auto it = std::find(ge.begin(), ge.end(), e);
    if (it != ge.end()) {
      ++matched;
      ge.erase(it);
    }
  }
  if (matched == 0) return 0.0;
  return 2.0 * matched / static_cast<double>(n_pred + n_gold);
}

struct EmF1 {
  double em = 0.0;
  double f1 = 0.0;
};

inline EmF1 span_em_f1(std::vector<int> pred, std::vector<int> gold) {
  EmF1 r;
  if (pred.empty() && gold.empty()) return {1.0, 1.0};
  if (pred.empty() || gold.empty()) return {0.0, 0.0};
  r.em = (pred == gold) ? 1.0 : 0.0;
  std::sort(pred.begin(), pred.end());
  std::sort(gold.begin(), gold.end());
  std::vector<int> common;
  std::set_intersection(pred.begin(), pred.end(), gold.begin(), gold.end(),
                        std::back_inserter(common));
  if (common.empty()) return r;
  const double p = static_cast<double>(common.size()) / pred.size();
  const double q = static_cast<double>(common.size()) / gold.size();
  r.f1 = 2.0 * p * q / (p + q);
  return r;
}

inline double transfer_gap(const std::map<std::string, double>& per_language,
                           const std::string& source) {
  double others = 0.0;
  int n = 0;
  for (const auto& [lang, value] : per_language) {
    if (lang == source) continue;
    others += value;
    ++n;
  }
  return per_language.at(source) - others / n;
}

}  // namespace naive
