#pragma once

#include <optional>
#include <string>
#include <vector>

#include "clinsum/common.hpp"

namespace clinsum {

using TokenList = std::vector<std::string>;

struct BleuScores {
  double b1 = 0.0, b2 = 0.0, b3 = 0.0, b4 = 0.0;
  double bleu = 0.0;
};

// Corpus-level clipped n-gram precisions p_1..p_4 and composite BLEU with
// brevity penalty min(1, exp(1 - r/c)); zero precisions are floored at 1e-9
// inside the composite only.
BleuScores bleu(const std::vector<TokenList>& candidates, const std::vector<TokenList>& references, int max_n = 4);

struct PrfScores {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

PrfScores rouge_n(const TokenList& candidate, const TokenList& reference, int n);
// LCS-based; F1 with beta = 1.
PrfScores rouge_l(const TokenList& candidate, const TokenList& reference);

// Exact-match unigram METEOR variant: leftmost-greedy alignment,
// F_mean = 10PR/(R+9P), fragmentation penalty 0.5*(chunks/m)^3.
double meteor_lite(const TokenList& candidate, const TokenList& reference);

// Token-set intersection over union; both empty counts as 1.
double jaccard(const TokenList& candidate, const TokenList& reference);

struct ClassificationScores {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

ClassificationScores classification_metrics(const std::vector<std::string>& predicted,
                                            const std::vector<std::string>& gold,
                                            const std::vector<std::string>& label_set);

struct EvalReport {
  double b1 = 0.0, b2 = 0.0, b3 = 0.0, b4 = 0.0, bleu = 0.0;
  double rouge1 = 0.0, rouge2 = 0.0, rougeL = 0.0;
  double meteor = 0.0;
  double jaccard = 0.0;
  std::optional<double> dept_accuracy;
  std::optional<double> dept_macro_f1;
  int n_samples = 0;
};

// BLEU at corpus level, the per-sample metrics macro-averaged.
EvalReport evaluate_corpus(const std::vector<TokenList>& candidates, const std::vector<TokenList>& references);

// One-row table in the usual benchmark column order (B-1..BLEU, R-1, R-2,
// ROUGE-L, METEOR x100; Jaccard and F1 raw; Accuracy x100).
std::string render_report(const EvalReport& report);

}  // namespace clinsum
