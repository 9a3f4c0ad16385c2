#include "stagerl/judge.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace stagerl::judging {

namespace {

nlohmann::json item_to_json(const RubricItem& it) {
    return nlohmann::json{
        {"uid", it.uid},
        {"title", it.title},
        {"description", it.description},
        {"weight", it.weight},
        {"polarity", it.polarity == Polarity::Positive ? "positive" : "negative"},
        {"stage", it.stage},
        {"origin", it.origin == Origin::Persistent ? "persistent" : "active"},
        {"created_step", it.created_step},
        {"facet", it.facet},
    };
}

RubricItem item_from_json(const nlohmann::json& j) {
    RubricItem it;
    it.uid = j.value("uid", 0ULL);
    it.title = j.value("title", "");
    it.description = j.value("description", "");
    it.weight = j.value("weight", 2);
    it.polarity = j.value("polarity", "positive") == "negative" ? Polarity::Negative
                                                                : Polarity::Positive;
    it.stage = j.value("stage", 4);
    it.origin = j.value("origin", "active") == "persistent" ? Origin::Persistent
                                                            : Origin::Active;
    it.created_step = j.value("created_step", 0);
    it.facet = j.value("facet", "");
    return it;
}

double population_variance(const std::vector<int>& values) {
    if (values.empty()) return 0.0;
    double mean = 0.0;
    for (int v : values) mean += v;
    mean /= values.size();
    double var = 0.0;
    for (int v : values) {
        double d = v - mean;
        var += d * d;
    }
    return var / values.size();
}

}  // namespace

std::vector<const RubricItem*> StageRubricBuffer::stage_items(int stage) const {
    std::vector<const RubricItem*> out;
    for (const auto& it : persistent)
        if (it.stage == stage) out.push_back(&it);
    for (const auto& it : active[stage - 1]) out.push_back(&it);
    return out;
}

std::string StageRubricBuffer::to_json() const {
    nlohmann::json j;
    auto pers = nlohmann::json::array();
    for (const auto& it : persistent) pers.push_back(item_to_json(it));
    j["persistent"] = pers;
    auto act = nlohmann::json::array();
    for (const auto& stage : active) {
        auto arr = nlohmann::json::array();
        for (const auto& it : stage) arr.push_back(item_to_json(it));
        act.push_back(arr);
    }
    j["active"] = act;
    j["caps"] = caps;
    return j.dump();
}

StageRubricBuffer StageRubricBuffer::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    StageRubricBuffer buf;
    for (const auto& it : j.at("persistent")) buf.persistent.push_back(item_from_json(it));
    int k = 0;
    for (const auto& stage : j.at("active")) {
        for (const auto& it : stage) buf.active[k].push_back(item_from_json(it));
        ++k;
    }
    if (j.contains("caps")) {
        int i = 0;
        for (const auto& c : j["caps"]) buf.caps[i++] = c.get<int>();
    }
    return buf;
}

std::optional<double> aggregate_stage_score(const std::vector<const RubricItem*>& items,
                                            const std::vector<RubricScore>& scores) {
    if (items.empty()) return std::nullopt;
    if (items.size() != scores.size())
        throw ConfigError("rubric items and scores are not aligned");
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        int v = scores[i].value;
        double s = items[i]->polarity == Polarity::Positive ? v / 2.0 : (2 - v) / 2.0;
        num += items[i]->weight * s;
        den += items[i]->weight;
    }
    if (den <= 0.0) return std::nullopt;
    return num / den;
}

ScoreOutcome score_trajectory(JudgeInterface& judge, const scaffold::ParsedTrajectory& pt,
                              const StageRubricBuffer& buffer) {
    ScoreOutcome out;
    try {
        for (int stage = 1; stage <= 4; ++stage) {
            auto items = buffer.stage_items(stage);
            if (items.empty()) {
                out.stages[stage - 1] = 0.0;
                continue;
            }
            auto scores = judge.score(pt, items);
            if (scores.size() != items.size())
                throw JudgeFailure("judge returned wrong number of scores");
            out.stages[stage - 1] = aggregate_stage_score(items, scores).value_or(0.0);
            for (std::size_t i = 0; i < items.size(); ++i)
                out.item_values[items[i]->uid] = scores[i].value;
        }
        return out;
    } catch (const JudgeFailure&) {
        // Terminal-only fallback: retry with the persistent answer rubrics.
        out = ScoreOutcome{};
        out.fallback = true;
        std::vector<const RubricItem*> terminal;
        for (const auto& it : buffer.persistent)
            if (it.stage == 4) terminal.push_back(&it);
        if (terminal.empty()) return out;
        try {
            auto scores = judge.score(pt, terminal);
            if (scores.size() != terminal.size()) return out;
            out.stages[3] = aggregate_stage_score(terminal, scores).value_or(0.0);
            for (std::size_t i = 0; i < terminal.size(); ++i)
                out.item_values[terminal[i]->uid] = scores[i].value;
        } catch (const JudgeFailure&) {
            // leave the all-zero vector
        }
        return out;
    }
}

std::vector<PruneRecord> update_buffer(
    StageRubricBuffer& buffer, const std::array<std::vector<RubricItem>, 4>& new_items,
    const std::map<std::uint64_t, std::vector<int>>& per_item_group_scores) {
    std::vector<PruneRecord> removed;
    for (int k = 0; k < 4; ++k) {
        for (const auto& it : new_items[k]) {
            if (it.stage != k + 1) throw ConfigError("new rubric item filed under wrong stage");
            buffer.active[k].push_back(it);
            buffer.active[k].back().origin = Origin::Active;
        }
        while (buffer.active[k].size() > static_cast<std::size_t>(buffer.caps[k])) {
            std::size_t worst = 0;
            double worst_var = 0.0;
            bool first = true;
            for (std::size_t i = 0; i < buffer.active[k].size(); ++i) {
                const auto& it = buffer.active[k][i];
                double var = 0.0;
                auto found = per_item_group_scores.find(it.uid);
                if (found != per_item_group_scores.end())
                    var = population_variance(found->second);
                const auto& best = buffer.active[k][worst];
                bool better = first || var < worst_var ||
                              (var == worst_var && (it.created_step < best.created_step ||
                                                    (it.created_step == best.created_step &&
                                                     it.uid < best.uid)));
                if (better) {
                    worst = i;
                    worst_var = var;
                    first = false;
                }
            }
            removed.push_back({buffer.active[k][worst], worst_var});
            buffer.active[k].erase(buffer.active[k].begin() +
                                   static_cast<std::ptrdiff_t>(worst));
        }
    }
    return removed;
}

// ---------------------------------------------------------------------------

const std::set<std::string>& TrajectoryFacets::stage_presence(int stage) const {
    switch (stage) {
        case 1: return plan;
        case 2: return retrieved;
        case 3: return reviewed;
        default: return answered;
    }
}

std::set<std::string> TrajectoryFacets::universe() const {
    std::set<std::string> u = plan;
    u.insert(retrieved.begin(), retrieved.end());
    u.insert(reviewed.begin(), reviewed.end());
    u.insert(answered.begin(), answered.end());
    return u;
}

std::set<std::string> facet_mentions(std::string_view text) {
    std::set<std::string> out;
    static constexpr std::string_view kMarker = "facet:";
    std::size_t pos = 0;
    while ((pos = text.find(kMarker, pos)) != std::string_view::npos) {
        std::size_t start = pos + kMarker.size();
        std::size_t end = start;
        while (end < text.size() &&
               (std::isalnum(static_cast<unsigned char>(text[end])) || text[end] == '_'))
            ++end;
        if (end > start) out.insert(std::string(text.substr(start, end - start)));
        pos = end;
    }
    return out;
}

TrajectoryFacets extract_facets(const scaffold::ParsedTrajectory& pt) {
    TrajectoryFacets f;
    f.plan = facet_mentions(pt.stage_text(scaffold::Stage::Plan));
    f.reviewed = facet_mentions(pt.stage_text(scaffold::Stage::Review));
    f.answered = facet_mentions(pt.stage_text(scaffold::Stage::Answer));

    // Which snippet revealed which facet, from the environment's tool outputs.
    std::map<std::string, std::set<std::string>> snippet_facets;
    for (const auto& region : pt.tool_outputs) {
        std::string_view body(pt.text.data() + region.begin, region.size());
        std::size_t pos = 0;
        while ((pos = body.find("<snippet", pos)) != std::string_view::npos) {
            auto id_pos = body.find("id=\"", pos);
            auto close = body.find("</snippet>", pos);
            if (id_pos == std::string_view::npos || close == std::string_view::npos) break;
            auto id_end = body.find('"', id_pos + 4);
            if (id_end == std::string_view::npos) break;
            std::string id(body.substr(id_pos + 4, id_end - id_pos - 4));
            auto content_start = body.find('>', id_end);
            if (content_start == std::string_view::npos) break;
            auto facets =
                facet_mentions(body.substr(content_start + 1, close - content_start - 1));
            snippet_facets[id].insert(facets.begin(), facets.end());
            f.retrieved.insert(facets.begin(), facets.end());
            pos = close + 1;
        }
    }

    for (const auto& c : scaffold::extract_citations(pt)) {
        auto it = snippet_facets.find(c.snippet_id);
        if (it == snippet_facets.end()) continue;
        for (const auto& facet : facet_mentions(c.claim))
            if (it->second.count(facet)) f.cited.insert(facet);
    }
    return f;
}

ScriptedJudge::ScriptedJudge(ScriptedJudgeConfig cfg, std::uint64_t* uid_counter)
    : cfg_(std::move(cfg)), uid_counter_(uid_counter) {}

std::uint64_t ScriptedJudge::next_uid() {
    if (uid_counter_) return (*uid_counter_)++;
    return local_counter_++;
}

int ScriptedJudge::score_value(const TrajectoryFacets& f, const RubricItem& item) const {
    bool present = f.stage_presence(item.stage).count(item.facet) > 0;
    if (item.polarity == Polarity::Negative) return present ? 2 : 0;
    if (item.stage == 4) {
        if (f.cited.count(item.facet)) return 2;
        return present ? 1 : 0;
    }
    return present ? 2 : 0;
}

std::array<std::vector<RubricItem>, 4> ScriptedJudge::generate_rubrics(
    const std::string& query,
    const std::vector<const scaffold::ParsedTrajectory*>& trajectories,
    const StageRubricBuffer& buffer, const std::vector<std::string>& self_rubrics) {
    (void)query;
    if (cfg_.fail_mode == 1) throw JudgeFailure("scripted judge configured to fail");
    std::array<std::vector<RubricItem>, 4> out;
    if (trajectories.size() < 2) return out;

    std::vector<TrajectoryFacets> features;
    features.reserve(trajectories.size());
    std::set<std::string> universe;
    for (const auto* pt : trajectories) {
        features.push_back(extract_facets(*pt));
        auto u = features.back().universe();
        universe.insert(u.begin(), u.end());
    }

    std::set<std::string> referenced;
    for (const auto& r : self_rubrics) {
        auto m = facet_mentions(r);
        referenced.insert(m.begin(), m.end());
    }

    // Facets the agent itself called out come first in emission order.
    std::vector<std::string> ordered;
    for (const auto& facet : referenced)
        if (universe.count(facet)) ordered.push_back(facet);
    for (const auto& facet : universe)
        if (!referenced.count(facet)) ordered.push_back(facet);

    for (int stage = 1; stage <= 4; ++stage) {
        std::set<std::string> covered;
        for (const auto* item : buffer.stage_items(stage))
            if (item->polarity == Polarity::Positive) covered.insert(item->facet);
        for (const auto& facet : ordered) {
            if (static_cast<int>(out[stage - 1].size()) >= cfg_.max_new_per_stage) break;
            if (covered.count(facet)) continue;
            int have = 0;
            for (const auto& f : features)
                if (f.stage_presence(stage).count(facet)) ++have;
            bool discriminates = have > 0 && have < static_cast<int>(features.size());
            if (!discriminates) continue;
            RubricItem item;
            item.uid = next_uid();
            item.title = "covers facet:" + facet;
            item.description = "Stage " + std::to_string(stage) +
                               " engages with facet:" + facet +
                               " where stronger rollouts do and weaker ones do not.";
            auto w = cfg_.facet_weights.find(facet);
            item.weight = w == cfg_.facet_weights.end() ? 2 : w->second;
            item.polarity = Polarity::Positive;
            item.stage = stage;
            item.origin = Origin::Active;
            item.created_step = step_;
            item.facet = facet;
            out[stage - 1].push_back(std::move(item));
            covered.insert(facet);
        }
    }
    return out;
}

std::vector<RubricScore> ScriptedJudge::score(const scaffold::ParsedTrajectory& pt,
                                              const std::vector<const RubricItem*>& items) {
    if (cfg_.fail_mode == 1) throw JudgeFailure("scripted judge configured to fail");
    if (cfg_.fail_mode == 2) {
        bool persistent_only = true;
        for (const auto* it : items)
            if (it->origin != Origin::Persistent || it->stage != 4) persistent_only = false;
        if (!persistent_only) throw JudgeFailure("scripted judge failing full scoring");
    }

    auto facets = extract_facets(pt);
    std::vector<RubricScore> out;
    out.reserve(items.size());
    std::uint64_t text_key = fnv1a(pt.text);
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& item = *items[i];
        int value = score_value(facets, item);
        if (cfg_.noise_std > 0.0 && cfg_.noise_stages[item.stage - 1]) {
            auto rng = make_rng(cfg_.seed, text_key, item.uid, std::uint64_t{0x9e1});
            std::normal_distribution<double> noise(0.0, cfg_.noise_std);
            double sign = item.polarity == Polarity::Positive ? 1.0 : -1.0;
            long shifted = std::lround(value + 2.0 * sign * noise(rng));
            value = static_cast<int>(std::clamp(shifted, 0L, 2L));
        }
        RubricScore rs;
        rs.item_index = static_cast<int>(i);
        rs.value = value;
        rs.justification = (value > 0 ? "observed facet:" : "no evidence of facet:") +
                           item.facet + " at stage " + std::to_string(item.stage);
        out.push_back(std::move(rs));
    }
    return out;
}

std::string ItemScoreLogEntry::to_json_line() const {
    nlohmann::json j{{"step", step},
                     {"question_id", question_id},
                     {"item_index", item_index},
                     {"rollout_id", rollout_id},
                     {"value", value}};
    return j.dump();
}

}  // namespace stagerl::judging
