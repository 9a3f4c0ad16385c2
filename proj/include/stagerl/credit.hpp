#pragma once

#include <string>
#include <vector>

#include "stagerl/common.hpp"

namespace stagerl::credit {

// Causal stage-dependence weights: w(k,j) is the credit stage k receives from
// stage j's score, zero below the diagonal.
struct StageMatrix {
    int K = 0;
    std::vector<double> w;  // row-major K*K
    bool strict_causal = true;

    double at(int k, int j) const { return w[static_cast<std::size_t>(k) * K + j]; }
    double& at(int k, int j) { return w[static_cast<std::size_t>(k) * K + j]; }

    void validate() const;

    static StageMatrix identity(int K);
    // Only the terminal column carries weight; every stage inherits the final
    // score. Not strictly causal, so the flag is off.
    static StageMatrix terminal_broadcast(int K);
    static StageMatrix paper_default();

    // Plain-text block: K on the first line, then K rows of K reals.
    // The name "paper-default" resolves to the shipped preset.
    static StageMatrix from_text(const std::string& text);
    static StageMatrix named_preset(const std::string& name);
    std::string to_text() const;
};

struct GroupScores {
    int n = 0;
    int K = 0;
    std::vector<double> scores;  // row-major n*K, entries in [0,1]
    std::vector<std::string> rollout_ids;

    double at(int i, int k) const { return scores[static_cast<std::size_t>(i) * K + k]; }
    double& at(int i, int k) { return scores[static_cast<std::size_t>(i) * K + k]; }
};

struct ReturnMatrix {
    int n = 0;
    int K = 0;
    std::vector<double> returns;

    double at(int i, int k) const { return returns[static_cast<std::size_t>(i) * K + k]; }
    double& at(int i, int k) { return returns[static_cast<std::size_t>(i) * K + k]; }
};

struct AdvantageMatrix {
    int n = 0;
    int K = 0;
    double epsilon = 1e-6;
    std::vector<double> advantages;

    double at(int i, int k) const { return advantages[static_cast<std::size_t>(i) * K + k]; }
    double& at(int i, int k) { return advantages[static_cast<std::size_t>(i) * K + k]; }
};

inline constexpr double kDefaultEpsilon = 1e-6;
inline constexpr double kDefaultClipEta = 0.2;
inline constexpr double kDefaultKlBeta = 0.001;

enum class KlEstimator { K3 };
enum class LossAggregation { PerRolloutSum, GlobalTokenMean };

struct ObjectiveConfig {
    double clip_eta = kDefaultClipEta;
    double kl_beta = kDefaultKlBeta;
    double epsilon = kDefaultEpsilon;
    KlEstimator kl_estimator = KlEstimator::K3;
    LossAggregation aggregation = LossAggregation::PerRolloutSum;

    void validate() const;
};

struct TokenRecord {
    double new_logprob = 0.0;
    double old_logprob = 0.0;
    double ref_logprob = 0.0;
    int rollout = 0;  // block index i
    int stage = 0;    // block index k, 0-based
};

struct TokenLogProbs {
    int n = 0;
    int K = 0;
    std::vector<TokenRecord> tokens;
};

ReturnMatrix stage_returns(const GroupScores& g, const StageMatrix& lam);

AdvantageMatrix group_advantages(const ReturnMatrix& returns,
                                 double epsilon = kDefaultEpsilon);

// k3 estimator: r - ln r - 1 with r = exp(ref - new). Nonnegative, zero iff
// the distributions agree at the sampled token.
double kl_per_token(double new_logprob, double ref_logprob);

struct LossResult {
    double loss = 0.0;
    double surrogate = 0.0;  // clipped-objective part of the loss
    double kl = 0.0;         // unweighted k3 sum
    // d(loss)/d(new_logprob) per token; exactly zero on the clipped branch of
    // the surrogate (KL contribution included).
    std::vector<double> dloss_dnew;
};

LossResult ssgrpo_loss(const TokenLogProbs& tokens, const AdvantageMatrix& adv,
                       const ObjectiveConfig& cfg);

// Terminal-broadcast special case: every stage of rollout i receives the
// group-normalized final-stage score.
AdvantageMatrix answer_only_baseline(const GroupScores& g,
                                     double epsilon = kDefaultEpsilon);

// CSV with header rollout_id,stage,value; stages are 1-based in the file.
std::string matrix_to_csv(const std::vector<std::string>& rollout_ids, int n, int K,
                          const std::vector<double>& values);

}  // namespace stagerl::credit
