#include "bsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "bsim/env.hpp"
#include "bsim/error.hpp"

namespace bsim {

namespace {

constexpr double kClip = 1e-15;

void check_pairs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw UsageError("scores and labels differ in length (" + std::to_string(scores.size()) + " vs " +
                     std::to_string(labels.size()) + ")");
  if (scores.empty()) throw UndefinedMetric("metric needs at least one example");
  for (double s : scores)
    if (std::isnan(s)) throw InputError("score is NaN");
}

std::vector<std::size_t> order_by_score_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

double bce(double p, std::uint8_t y) {
  p = std::clamp(p, kClip, 1.0 - kClip);
  return y ? -std::log(p) : -std::log1p(-p);
}

}  // namespace

double ctr_uplift(double model_ctr, double random_ctr) {
  if (random_ctr == 0.0) throw UndefinedMetric("CTR uplift is undefined for a zero random-policy CTR");
  return 100.0 * (model_ctr / random_ctr - 1.0);
}

double pr_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_pairs(scores, labels);
  const auto positives = std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; });
  if (positives == 0) throw UndefinedMetric("PR-AUC is undefined without positive labels");
  const auto idx = order_by_score_desc(scores);
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, area = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / static_cast<double>(positives);
    area += (recall - prev_recall) * tp / (tp + fp);
    prev_recall = recall;
    i = j;
  }
  return area;
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_pairs(scores, labels);
  const auto idx = order_by_score_desc(scores);
  const double n = static_cast<double>(idx.size());
  double pos = 0.0, rank_sum = 0.0;
  // Ranks ascend from the lowest score; ties share their midrank.
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = n - (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]]) {
        pos += 1.0;
        rank_sum += midrank;
      }
    i = j;
  }
  const double neg = n - pos;
  if (pos == 0.0 || neg == 0.0) throw UndefinedMetric("ROC-AUC needs both positive and negative labels");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double log_loss(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_pairs(scores, labels);
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) sum += bce(scores[i], labels[i]);
  return sum / static_cast<double>(scores.size());
}

double rce(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_pairs(scores, labels);
  const double rate = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; })) /
                      static_cast<double>(labels.size());
  if (rate == 0.0 || rate == 1.0) throw UndefinedMetric("RCE is undefined when every label is identical");
  double naive = 0.0;
  for (auto y : labels) naive += bce(rate, y);
  naive /= static_cast<double>(labels.size());
  return 100.0 * (naive - log_loss(scores, labels)) / naive;
}

RegretSeries regret(std::span<const Impression> log, const Catalog& catalog,
                    std::span<const std::vector<std::size_t>> oracle_slates) {
  if (!catalog.truth_ctr) throw UsageError("regret needs a catalog with ground-truth CTRs");
  std::unordered_map<std::string, std::size_t> users, ads;
  for (std::size_t i = 0; i < catalog.users(); ++i) users[catalog.user_ids[i]] = i;
  for (std::size_t i = 0; i < catalog.ads(); ++i) ads[catalog.ad_ids[i]] = i;
  auto find = [](const auto& map, const std::string& id) {
    const auto it = map.find(id);
    if (it == map.end()) throw LookupError("impression references unknown id '" + id + "'");
    return it->second;
  };

  RegretSeries out;
  std::size_t pos = 0;
  while (pos < log.size()) {
    const std::size_t r = out.per_round.size();
    if (r >= oracle_slates.size()) throw UsageError("fewer oracle slates than logged rounds");
    const std::uint64_t round = log[pos].round;
    const std::size_t user = find(users, log[pos].user_id);
    double served = 0.0;
    for (; pos < log.size() && log[pos].round == round; ++pos) served += catalog.truth(user, find(ads, log[pos].ad_id));
    double best = 0.0;
    for (auto a : oracle_slates[r]) best += catalog.truth(user, a);
    out.per_round.push_back(best - served);
    out.cumulative.push_back((out.cumulative.empty() ? 0.0 : out.cumulative.back()) + best - served);
  }
  return out;
}

std::vector<double> cumulative_ctr_series(std::span<const Impression> log) {
  std::vector<double> out;
  double clicks = 0.0, shown = 0.0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    clicks += log[i].label;
    shown += 1.0;
    if (i + 1 == log.size() || log[i + 1].round != log[i].round) out.push_back(clicks / shown);
  }
  return out;
}

}  // namespace bsim
