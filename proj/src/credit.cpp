#include "stagerl/credit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stagerl::credit {

void StageMatrix::validate() const {
    if (K <= 0 || w.size() != static_cast<std::size_t>(K) * K)
        throw ConfigError("stage matrix has wrong dimensions");
    for (int k = 0; k < K; ++k) {
        for (int j = 0; j < K; ++j) {
            double v = at(k, j);
            if (j < k && v != 0.0)
                throw ConfigError("stage matrix must be zero below the diagonal");
            if (v < 0.0 || v > 1.0)
                throw ConfigError("stage matrix entries must lie in [0,1]");
        }
        if (strict_causal && at(k, k) != 1.0)
            throw ConfigError("strictly causal stage matrix needs unit diagonal");
    }
}

StageMatrix StageMatrix::identity(int K) {
    StageMatrix m{K, std::vector<double>(static_cast<std::size_t>(K) * K, 0.0), true};
    for (int k = 0; k < K; ++k) m.at(k, k) = 1.0;
    return m;
}

StageMatrix StageMatrix::terminal_broadcast(int K) {
    StageMatrix m{K, std::vector<double>(static_cast<std::size_t>(K) * K, 0.0), false};
    for (int k = 0; k < K; ++k) m.at(k, K - 1) = 1.0;
    return m;
}

StageMatrix StageMatrix::paper_default() {
    StageMatrix m{4, {1.0, 0.4, 0.6, 0.8,  //
                      0.0, 1.0, 0.4, 0.8,  //
                      0.0, 0.0, 1.0, 0.8,  //
                      0.0, 0.0, 0.0, 1.0},
                  true};
    return m;
}

StageMatrix StageMatrix::named_preset(const std::string& name) {
    if (name == "paper-default") return paper_default();
    throw ConfigError("unknown stage-matrix preset: " + name);
}

StageMatrix StageMatrix::from_text(const std::string& text) {
    auto t = trim(text);
    if (t == "paper-default") return paper_default();
    std::istringstream in(t);
    int K = 0;
    if (!(in >> K) || K <= 0) throw ConfigError("stage matrix text: bad dimension");
    StageMatrix m{K, std::vector<double>(static_cast<std::size_t>(K) * K, 0.0), true};
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < K; ++j)
            if (!(in >> m.at(k, j))) throw ConfigError("stage matrix text: missing entry");
    bool unit_diag = true;
    for (int k = 0; k < K; ++k)
        if (m.at(k, k) != 1.0) unit_diag = false;
    m.strict_causal = unit_diag;
    m.validate();
    return m;
}

std::string StageMatrix::to_text() const {
    std::ostringstream out;
    out << K << "\n";
    for (int k = 0; k < K; ++k) {
        for (int j = 0; j < K; ++j) out << (j ? " " : "") << at(k, j);
        out << "\n";
    }
    return out.str();
}

void ObjectiveConfig::validate() const {
    if (!(clip_eta > 0.0 && clip_eta < 1.0))
        throw ConfigError("clip_eta must lie in (0,1)");
    if (kl_beta < 0.0) throw ConfigError("kl_beta must be nonnegative");
    if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
}

ReturnMatrix stage_returns(const GroupScores& g, const StageMatrix& lam) {
    if (lam.K != g.K) throw ConfigError("stage matrix dimension mismatch");
    ReturnMatrix r{g.n, g.K, std::vector<double>(static_cast<std::size_t>(g.n) * g.K, 0.0)};
    for (int i = 0; i < g.n; ++i)
        for (int k = 0; k < g.K; ++k) {
            double acc = 0.0;
            for (int j = k; j < g.K; ++j) acc += lam.at(k, j) * g.at(i, j);
            r.at(i, k) = acc;
        }
    return r;
}

AdvantageMatrix group_advantages(const ReturnMatrix& returns, double epsilon) {
    if (returns.n < 2)
        throw ConfigError("group statistics need at least two rollouts");
    AdvantageMatrix a{returns.n, returns.K, epsilon,
                      std::vector<double>(returns.returns.size(), 0.0)};
    for (int k = 0; k < returns.K; ++k) {
        double lo = returns.at(0, k), hi = lo;
        double mean = 0.0;
        for (int i = 0; i < returns.n; ++i) {
            double v = returns.at(i, k);
            mean += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (lo == hi) continue;  // constant column: exactly zero advantages
        mean /= returns.n;
        double var = 0.0;
        for (int i = 0; i < returns.n; ++i) {
            double d = returns.at(i, k) - mean;
            var += d * d;
        }
        var /= returns.n;  // population convention
        double denom = std::sqrt(var) + epsilon;
        for (int i = 0; i < returns.n; ++i)
            a.at(i, k) = (returns.at(i, k) - mean) / denom;
    }
    return a;
}

double kl_per_token(double new_logprob, double ref_logprob) {
    double r = std::exp(ref_logprob - new_logprob);
    return r - (ref_logprob - new_logprob) - 1.0;
}

LossResult ssgrpo_loss(const TokenLogProbs& tokens, const AdvantageMatrix& adv,
                       const ObjectiveConfig& cfg) {
    cfg.validate();
    if (tokens.n != adv.n || tokens.K != adv.K)
        throw ConfigError("token block layout does not match advantage matrix");
    LossResult res;
    res.dloss_dnew.assign(tokens.tokens.size(), 0.0);

    const double lo = 1.0 - cfg.clip_eta;
    const double hi = 1.0 + cfg.clip_eta;
    const bool token_mean = cfg.aggregation == LossAggregation::GlobalTokenMean;
    const double surr_scale =
        token_mean ? (tokens.tokens.empty() ? 0.0 : 1.0 / tokens.tokens.size())
                   : 1.0 / tokens.n;
    const double kl_scale =
        token_mean ? (tokens.tokens.empty() ? 0.0 : 1.0 / tokens.tokens.size()) : 1.0;

    double surrogate = 0.0;
    double kl_sum = 0.0;
    for (std::size_t t = 0; t < tokens.tokens.size(); ++t) {
        const auto& tok = tokens.tokens[t];
        if (tok.rollout < 0 || tok.rollout >= adv.n || tok.stage < 0 || tok.stage >= adv.K)
            throw ConfigError("token maps outside the advantage matrix");
        double A = adv.at(tok.rollout, tok.stage);
        double rho = std::exp(tok.new_logprob - tok.old_logprob);
        bool clipped = (A > 0.0 && rho > hi) || (A < 0.0 && rho < lo);
        double term = clipped ? std::clamp(rho, lo, hi) * A : rho * A;
        surrogate += term;
        if (!clipped) res.dloss_dnew[t] = -surr_scale * A * rho;

        double r = std::exp(tok.ref_logprob - tok.new_logprob);
        kl_sum += r - (tok.ref_logprob - tok.new_logprob) - 1.0;
        res.dloss_dnew[t] += cfg.kl_beta * kl_scale * (1.0 - r);
    }
    res.surrogate = -surr_scale * surrogate;
    res.kl = kl_sum;
    res.loss = res.surrogate + cfg.kl_beta * kl_scale * kl_sum;
    return res;
}

AdvantageMatrix answer_only_baseline(const GroupScores& g, double epsilon) {
    if (g.n < 2) throw ConfigError("group statistics need at least two rollouts");
    AdvantageMatrix a{g.n, g.K, epsilon,
                      std::vector<double>(static_cast<std::size_t>(g.n) * g.K, 0.0)};
    double lo = g.at(0, g.K - 1), hi = lo;
    double mean = 0.0;
    for (int i = 0; i < g.n; ++i) {
        double v = g.at(i, g.K - 1);
        mean += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (lo == hi) return a;
    mean /= g.n;
    double var = 0.0;
    for (int i = 0; i < g.n; ++i) {
        double d = g.at(i, g.K - 1) - mean;
        var += d * d;
    }
    var /= g.n;
    double denom = std::sqrt(var) + epsilon;
    for (int i = 0; i < g.n; ++i) {
        double v = (g.at(i, g.K - 1) - mean) / denom;
        for (int k = 0; k < g.K; ++k) a.at(i, k) = v;
    }
    return a;
}

std::string matrix_to_csv(const std::vector<std::string>& rollout_ids, int n, int K,
                          const std::vector<double>& values) {
    std::ostringstream out;
    out << "rollout_id,stage,value\n";
    out.precision(17);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < K; ++k) {
            out << (i < static_cast<int>(rollout_ids.size()) ? rollout_ids[i]
                                                             : std::to_string(i))
                << "," << (k + 1) << "," << values[static_cast<std::size_t>(i) * K + k]
                << "\n";
        }
    return out.str();
}

}  // namespace stagerl::credit
