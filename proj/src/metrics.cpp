#include "clinsum/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace clinsum {

namespace {

// n-gram -> count; n-grams are joined with a separator that cannot occur
// inside a whitespace-split token
std::map<std::string, int> ngram_counts(const TokenList& tokens, int n) {
  std::map<std::string, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int j = 1; j < n; ++j) {
      key += '\x1f';
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

double f1_of(double p, double r) { return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

BleuScores bleu(const std::vector<TokenList>& candidates, const std::vector<TokenList>& references, int max_n) {
  if (candidates.size() != references.size()) {
    throw DataError("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                    std::to_string(references.size()) + " references");
  }
  if (max_n < 1) throw ConfigError("bleu: max_n must be >= 1");

  std::vector<long> matched(static_cast<size_t>(max_n), 0);
  std::vector<long> total(static_cast<size_t>(max_n), 0);
  long cand_len = 0, ref_len = 0;
  for (size_t s = 0; s < candidates.size(); ++s) {
    cand_len += static_cast<long>(candidates[s].size());
    ref_len += static_cast<long>(references[s].size());
    for (int n = 1; n <= max_n; ++n) {
      auto cand = ngram_counts(candidates[s], n);
      auto ref = ngram_counts(references[s], n);
      for (const auto& [gram, count] : cand) {
        total[static_cast<size_t>(n - 1)] += count;
        auto it = ref.find(gram);
        if (it != ref.end()) matched[static_cast<size_t>(n - 1)] += std::min(count, it->second);
      }
    }
  }

  BleuScores out;
  std::vector<double> p(static_cast<size_t>(max_n), 0.0);
  for (int n = 0; n < max_n; ++n) {
    p[static_cast<size_t>(n)] = total[static_cast<size_t>(n)] > 0
                                    ? static_cast<double>(matched[static_cast<size_t>(n)]) / total[static_cast<size_t>(n)]
                                    : 0.0;
  }
  double* slots[4] = {&out.b1, &out.b2, &out.b3, &out.b4};
  for (int n = 0; n < std::min(max_n, 4); ++n) *slots[n] = p[static_cast<size_t>(n)];

  if (cand_len == 0) return out;
  double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / cand_len);
  double log_sum = 0.0;
  int upto = std::min(max_n, 4);
  for (int n = 0; n < upto; ++n) log_sum += std::log(std::max(p[static_cast<size_t>(n)], 1e-9));
  out.bleu = bp * std::exp(log_sum / upto);
  return out;
}

PrfScores rouge_n(const TokenList& candidate, const TokenList& reference, int n) {
  if (n < 1) throw ConfigError("rouge_n: n must be >= 1");
  auto cand = ngram_counts(candidate, n);
  auto ref = ngram_counts(reference, n);
  long cand_total = 0, ref_total = 0, match = 0;
  for (const auto& [g, c] : cand) cand_total += c;
  for (const auto& [g, c] : ref) ref_total += c;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) match += std::min(c, it->second);
  }
  PrfScores out;
  if (cand_total == 0 || ref_total == 0) return out;
  out.precision = static_cast<double>(match) / cand_total;
  out.recall = static_cast<double>(match) / ref_total;
  out.f1 = f1_of(out.precision, out.recall);
  return out;
}

PrfScores rouge_l(const TokenList& candidate, const TokenList& reference) {
  PrfScores out;
  if (candidate.empty() || reference.empty()) return out;
  size_t m = candidate.size(), n = reference.size();
  std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  double lcs = prev[n];
  out.precision = lcs / static_cast<double>(m);
  out.recall = lcs / static_cast<double>(n);
  out.f1 = f1_of(out.precision, out.recall);
  return out;
}

double meteor_lite(const TokenList& candidate, const TokenList& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  // leftmost-greedy exact alignment, each reference token used once
  std::vector<bool> used(reference.size(), false);
  std::vector<int> match_ref(candidate.size(), -1);
  int m = 0;
  for (size_t i = 0; i < candidate.size(); ++i) {
    for (size_t j = 0; j < reference.size(); ++j) {
      if (!used[j] && candidate[i] == reference[j]) {
        used[j] = true;
        match_ref[i] = static_cast<int>(j);
        ++m;
        break;
      }
    }
  }
  if (m == 0) return 0.0;
  double p = static_cast<double>(m) / candidate.size();
  double r = static_cast<double>(m) / reference.size();
  double f_mean = 10.0 * p * r / (r + 9.0 * p);
  // chunks: maximal runs of matches contiguous in both sequences
  int chunks = 0;
  int prev_i = -10, prev_j = -10;
  for (size_t i = 0; i < candidate.size(); ++i) {
    if (match_ref[i] < 0) continue;
    if (static_cast<int>(i) != prev_i + 1 || match_ref[i] != prev_j + 1) ++chunks;
    prev_i = static_cast<int>(i);
    prev_j = match_ref[i];
  }
  double frag = static_cast<double>(chunks) / m;
  double penalty = 0.5 * frag * frag * frag;
  return f_mean * (1.0 - penalty);
}

double jaccard(const TokenList& candidate, const TokenList& reference) {
  std::set<std::string> a(candidate.begin(), candidate.end());
  std::set<std::string> b(reference.begin(), reference.end());
  if (a.empty() && b.empty()) return 1.0;
  long inter = 0;
  for (const auto& tok : a) inter += b.count(tok);
  long uni = static_cast<long>(a.size() + b.size()) - inter;
  return static_cast<double>(inter) / uni;
}

ClassificationScores classification_metrics(const std::vector<std::string>& predicted,
                                            const std::vector<std::string>& gold,
                                            const std::vector<std::string>& label_set) {
  if (predicted.size() != gold.size()) {
    throw DataError("classification_metrics: " + std::to_string(predicted.size()) + " predictions vs " +
                    std::to_string(gold.size()) + " labels");
  }
  if (predicted.empty()) throw DataError("classification_metrics: empty input");
  ClassificationScores out;
  long correct = 0;
  for (size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == gold[i];
  out.accuracy = static_cast<double>(correct) / predicted.size();

  double f1_sum = 0.0;
  for (const auto& label : label_set) {
    long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < predicted.size(); ++i) {
      bool p = predicted[i] == label, g = gold[i] == label;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    double prec = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    double rec = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    f1_sum += f1_of(prec, rec);
  }
  out.macro_f1 = label_set.empty() ? 0.0 : f1_sum / label_set.size();
  return out;
}

EvalReport evaluate_corpus(const std::vector<TokenList>& candidates, const std::vector<TokenList>& references) {
  if (candidates.size() != references.size()) {
    throw DataError("evaluate_corpus: " + std::to_string(candidates.size()) + " candidates vs " +
                    std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw DataError("evaluate_corpus: no samples");

  EvalReport report;
  report.n_samples = static_cast<int>(candidates.size());
  BleuScores b = bleu(candidates, references);
  report.b1 = b.b1;
  report.b2 = b.b2;
  report.b3 = b.b3;
  report.b4 = b.b4;
  report.bleu = b.bleu;
  for (size_t i = 0; i < candidates.size(); ++i) {
    report.rouge1 += rouge_n(candidates[i], references[i], 1).f1;
    report.rouge2 += rouge_n(candidates[i], references[i], 2).f1;
    report.rougeL += rouge_l(candidates[i], references[i]).f1;
    report.meteor += meteor_lite(candidates[i], references[i]);
    report.jaccard += jaccard(candidates[i], references[i]);
  }
  report.rouge1 /= report.n_samples;
  report.rouge2 /= report.n_samples;
  report.rougeL /= report.n_samples;
  report.meteor /= report.n_samples;
  report.jaccard /= report.n_samples;
  return report;
}

std::string render_report(const EvalReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "B-1    B-2    B-3    B-4    BLEU   R-1    R-2    ROUGE-L  METEOR  Jaccard";
  if (report.dept_accuracy) os << "  Accuracy  F1-Score";
  os << "\n";
  auto pct = [&](double v) {
    os << std::setw(6) << std::left << v * 100.0 << " ";
  };
  pct(report.b1);
  pct(report.b2);
  pct(report.b3);
  pct(report.b4);
  pct(report.bleu);
  pct(report.rouge1);
  pct(report.rouge2);
  os << std::setw(8) << std::left << report.rougeL * 100.0 << " ";
  os << std::setw(7) << std::left << report.meteor * 100.0 << " ";
  os << std::setprecision(4) << std::setw(8) << std::left << report.jaccard;
  if (report.dept_accuracy) {
    os << std::setprecision(2) << " " << std::setw(9) << std::left << *report.dept_accuracy * 100.0;
    os << std::setprecision(4) << " " << std::setw(8) << std::left << report.dept_macro_f1.value_or(0.0);
  }
  os << "\n";
  return os.str();
}

}  // namespace clinsum
