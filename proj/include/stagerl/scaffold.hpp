#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "stagerl/common.hpp"

namespace stagerl::scaffold {

enum class FormatLabel { Exact, ShortForm, LongForm };

std::string format_label_name(FormatLabel f);
FormatLabel format_label_from_name(const std::string& name);

struct RawTrajectory {
    std::string text;
    std::string query;
    FormatLabel format_label = FormatLabel::LongForm;
};

enum class Stage : int { Plan = 1, Research = 2, Review = 3, Answer = 4 };
inline constexpr int kNumStages = 4;

enum class ToolName { GoogleSearch, SnippetSearch };

std::string tool_name_string(ToolName t);

// Maps variant spellings (google_web_search, Scholar_Search, ...) onto the
// two canonical tools. Empty result means the name is not recognizable.
std::optional<ToolName> normalize_tool_name(std::string_view raw);

struct ToolCall {
    ToolName name = ToolName::GoogleSearch;
    std::string query;
    Span raw_span;
    bool valid = false;  // canonical name resolved and query non-empty
    std::string raw_name;
};

struct TaggedSpan {
    std::string tag;
    Span span;  // open tag through close tag
};

struct Turn {
    int index = 0;  // 1-based
    std::optional<Span> think_span;
    std::vector<TaggedSpan> body_spans;
    std::optional<ToolCall> tool_call;
    std::optional<Span> answer_span;  // open tag position through end of text
};

struct StageSpan {
    Stage stage = Stage::Plan;
    Span span;
    std::vector<int> token_block;  // indices into the global pseudo-token list
};

struct Citation {
    std::string snippet_id;
    Span claim;
};

struct ParsedTrajectory {
    std::string text;
    std::vector<Turn> turns;
    std::array<StageSpan, kNumStages> stages;
    std::vector<Citation> citations;
    std::vector<Span> self_rubrics;   // <rubric> blocks inside structured plans
    std::vector<Span> tool_outputs;   // environment-emitted regions
    std::vector<Span> tokens;         // whitespace-delimited pseudo-tokens,
                                      // tool outputs excluded

    // Structure flags consumed by validate().
    bool has_answer_open = false;
    bool has_answer_close = false;
    bool has_plan = false;
    bool plan_has_deep_analysis = false;
    bool plan_has_rubric = false;
    bool has_review = false;
    std::vector<bool> turn_has_state_eval;  // per turn, turns >= 2 need it
    std::vector<bool> round_error;          // per turn with a tool output
    int tool_rounds = 0;
    int malformed_citations = 0;

    std::string stage_text(Stage s) const;
    const StageSpan& stage_span(Stage s) const {
        return stages[static_cast<int>(s) - 1];
    }
};

enum class Violation {
    MissingAnswerTag,
    NoToolCallNonFinal,
    MissingStructuralElement,
    ConsecutiveToolErrors,
    MaxRoundsExceeded,
    MalformedCitation,
};

std::string violation_name(Violation v);

struct ValidationReport {
    bool accepted = true;
    std::vector<Violation> violations;

    std::string to_json() const;
};

inline constexpr int kDefaultMaxRounds = 10;

// Tool outputs whose payload starts with this marker count as error rounds.
inline constexpr const char* kToolErrorMarker = "ERROR:";

ParsedTrajectory parse_trajectory(const RawTrajectory& raw);

ValidationReport validate(const ParsedTrajectory& pt,
                          int max_rounds = kDefaultMaxRounds);

struct CitationText {
    std::string snippet_id;
    std::string claim;
};

std::vector<CitationText> extract_citations(const ParsedTrajectory& pt);

std::vector<std::string> extract_self_rubrics(const ParsedTrajectory& pt);

// Line-delimited container: {"query":..., "format_label":..., "text":...}
std::vector<RawTrajectory> load_trajectory_file(const std::string& path);

}  // namespace stagerl::scaffold
