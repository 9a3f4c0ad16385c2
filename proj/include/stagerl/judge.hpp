#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stagerl/common.hpp"
#include "stagerl/scaffold.hpp"

namespace stagerl::judging {

enum class Polarity { Positive, Negative };
enum class Origin { Persistent, Active };

struct RubricItem {
    std::uint64_t uid = 0;
    std::string title;
    std::string description;
    int weight = 2;  // 1=minor, 2=important, 3=critical
    Polarity polarity = Polarity::Positive;
    int stage = 4;  // 1..4
    Origin origin = Origin::Active;
    int created_step = 0;
    std::string facet;  // machine-checkable target for the scripted judge
};

struct RubricScore {
    int item_index = 0;
    int value = 0;  // 0/1/2; negative items invert during aggregation
    std::string justification;
};

struct StageRubricBuffer {
    std::vector<RubricItem> persistent;  // never pruned; answer stage by default
    std::array<std::vector<RubricItem>, 4> active;
    std::array<int, 4> caps{3, 2, 2, 3};

    std::vector<const RubricItem*> stage_items(int stage) const;
    std::size_t active_size(int stage) const { return active[stage - 1].size(); }

    std::string to_json() const;
    static StageRubricBuffer from_json(const std::string& text);
};

using StageScoreVector = std::array<double, 4>;

class JudgeFailure : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class JudgeInterface {
  public:
    virtual ~JudgeInterface() = default;

    virtual std::array<std::vector<RubricItem>, 4> generate_rubrics(
        const std::string& query,
        const std::vector<const scaffold::ParsedTrajectory*>& trajectories,
        const StageRubricBuffer& buffer,
        const std::vector<std::string>& self_rubrics) = 0;

    // Must return exactly one RubricScore per supplied item.
    virtual std::vector<RubricScore> score(const scaffold::ParsedTrajectory& pt,
                                           const std::vector<const RubricItem*>& items) = 0;
};

// Weighted mean of rubric scores with negative polarity inverted; empty item
// lists yield nullopt (the caller substitutes 0 for rubric-free stages).
std::optional<double> aggregate_stage_score(const std::vector<const RubricItem*>& items,
                                            const std::vector<RubricScore>& scores);

struct ScoreOutcome {
    StageScoreVector stages{0.0, 0.0, 0.0, 0.0};
    std::map<std::uint64_t, int> item_values;  // uid -> value for this rollout
    bool fallback = false;
};

ScoreOutcome score_trajectory(JudgeInterface& judge, const scaffold::ParsedTrajectory& pt,
                              const StageRubricBuffer& buffer);

// Appends the new items, then prunes lowest-variance active items until the
// caps hold. Variance is taken over the most recent rollout group only; ties
// break toward the oldest created_step, then the smallest uid.
struct PruneRecord {
    RubricItem item;
    double variance = 0.0;
};
std::vector<PruneRecord> update_buffer(
    StageRubricBuffer& buffer, const std::array<std::vector<RubricItem>, 4>& new_items,
    const std::map<std::uint64_t, std::vector<int>>& per_item_group_scores);

// ---------------------------------------------------------------------------
// Scripted judge: a deterministic stand-in for the LLM judge. It reads facet
// markers out of the trajectory text and scores coverage per stage.

struct ScriptedJudgeConfig {
    std::map<std::string, int> facet_weights;  // default weight 2 when absent
    double noise_std = 0.0;                    // on the normalized score scale
    std::array<bool, 4> noise_stages{true, true, true, false};
    std::uint64_t seed = 0;
    int max_new_per_stage = 4;
    // 0 = healthy, 1 = every call fails, 2 = only full scoring fails (the
    // persistent-only retry succeeds)
    int fail_mode = 0;
};

struct TrajectoryFacets {
    std::set<std::string> plan;
    std::set<std::string> retrieved;
    std::set<std::string> reviewed;
    std::set<std::string> answered;
    std::set<std::string> cited;  // answered with a citation that grounds it

    const std::set<std::string>& stage_presence(int stage) const;
    std::set<std::string> universe() const;
};

TrajectoryFacets extract_facets(const scaffold::ParsedTrajectory& pt);

// Facet markers look like "facet:identifier" in rendered text.
std::set<std::string> facet_mentions(std::string_view text);

class ScriptedJudge : public JudgeInterface {
  public:
    explicit ScriptedJudge(ScriptedJudgeConfig cfg, std::uint64_t* uid_counter = nullptr);

    std::array<std::vector<RubricItem>, 4> generate_rubrics(
        const std::string& query,
        const std::vector<const scaffold::ParsedTrajectory*>& trajectories,
        const StageRubricBuffer& buffer,
        const std::vector<std::string>& self_rubrics) override;

    std::vector<RubricScore> score(const scaffold::ParsedTrajectory& pt,
                                   const std::vector<const RubricItem*>& items) override;

    int score_value(const TrajectoryFacets& f, const RubricItem& item) const;

    const ScriptedJudgeConfig& config() const { return cfg_; }
    void set_fail_mode(int mode) { cfg_.fail_mode = mode; }
    void set_step(int step) { step_ = step; }

  private:
    ScriptedJudgeConfig cfg_;
    std::uint64_t* uid_counter_;
    std::uint64_t local_counter_ = 1;
    int step_ = 0;

    std::uint64_t next_uid();
};

struct ItemScoreLogEntry {
    int step = 0;
    std::string question_id;
    std::uint64_t item_index = 0;
    std::string rollout_id;
    int value = 0;

    std::string to_json_line() const;
};

}  // namespace stagerl::judging
