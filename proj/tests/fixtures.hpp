#pragma once

#include <set>
#include <sstream>
#include <string>
#include <vector>

// Hand-built trajectory texts for parser and validator tests. The builder
// mirrors the scaffold grammar but is independent of the envsim renderer.
namespace fixtures {

struct TrajectoryOptions {
    int rounds = 1;                     // total tool-call rounds
    std::set<int> error_rounds;         // 1-based round indices with tool errors
    bool include_plan = true;
    bool include_deep_analysis = true;
    bool include_plan_rubric = true;
    bool include_state_eval = true;
    bool include_review = true;
    bool include_final_think = true;
    bool include_answer = true;
    bool close_answer = true;
    bool plan_revision = false;         // in-place revision during research
    std::string tool_name = "google_search";
    bool tool_call_in_round_2 = true;   // drop to trigger NoToolCallNonFinal
    std::string citation = "<cite id=\"S_1\">facet:alpha is established</cite>";
};

inline std::string build_trajectory(const TrajectoryOptions& o) {
    std::ostringstream t;
    t << "<think>\ninitial exploration of the question\n</think>\n";
    if (o.include_plan) {
        t << "<structured_plan>\n";
        if (o.include_deep_analysis)
            t << "<deep_analysis>\nExplicit needs: summarize facet:alpha.\n</deep_analysis>\n";
        if (o.include_plan_rubric)
            t << "<rubric>\n- [knowledge] facet:alpha must be covered\n</rubric>\n";
        t << "<research_plan>\nStep 1: search for facet:alpha.\n</research_plan>\n"
          << "</structured_plan>\n";
    }
    t << "<call_tool name=\"" << o.tool_name << "\">alpha evidence</call_tool>\n";

    for (int r = 1; r <= o.rounds; ++r) {
        bool err = o.error_rounds.count(r) > 0;
        t << "<tool_output>\n";
        if (err)
            t << "ERROR: search backend unavailable\n";
        else
            t << "<snippet id=\"S_" << r << "\">facet:alpha core evidence body " << r
              << "</snippet>\n";
        t << "</tool_output>\n";
        bool final_round = r == o.rounds;
        if (!final_round) {
            t << "<think>\nevaluating round " << r << "\n</think>\n";
            if (o.include_state_eval)
                t << "<state_evaluation>\nneed more evidence after round " << r
                  << "\n</state_evaluation>\n";
            if (o.plan_revision && r == 1) {
                t << "<structured_plan>\n<rubric>\n- revised: add facet:beta\n</rubric>\n"
                  << "</structured_plan>\n";
            }
            if (r != 1 || o.tool_call_in_round_2)
                t << "<call_tool name=\"" << o.tool_name << "\">alpha follow-up " << r
                  << "</call_tool>\n";
        } else {
            if (o.include_final_think)
                t << "<think>\nthe evidence looks sufficient\n</think>\n";
            if (o.include_state_eval)
                t << "<state_evaluation>\nEvidence covers facet:alpha; rubric "
                     "satisfied.\n</state_evaluation>\n";
            if (o.include_review)
                t << "<review>\n<rubric_review>\n- facet:alpha verified via "
                     "S_1\n</rubric_review>\n<writing_plan>\nOne paragraph summarizing "
                     "facet:alpha.\n</writing_plan>\n</review>\n";
            if (o.include_answer) {
                t << "<answer>\nSummary: " << o.citation << ".\n";
                if (o.close_answer) t << "</answer>\n";
            }
        }
    }
    std::string out = t.str();
    if (!out.empty() && out.back() == '\n') out.pop_back();
    return out;
}

inline std::string valid_two_turn() { return build_trajectory({}); }

}  // namespace fixtures
