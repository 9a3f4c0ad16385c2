#include "stagerl/scaffold.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace stagerl::scaffold {

namespace {

struct LexedTag {
    std::string name;
    std::map<std::string, std::string> attrs;
    Span span;  // '<' through '>'
    bool closing = false;
};

bool is_name_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

// Lex one tag starting at '<'. Returns nullopt when the text does not form a
// tag, in which case the caller treats '<' as literal text.
std::optional<LexedTag> lex_tag(const std::string& text, std::size_t pos) {
    LexedTag tag;
    std::size_t i = pos + 1;
    if (i < text.size() && text[i] == '/') {
        tag.closing = true;
        ++i;
    }
    std::size_t name_start = i;
    while (i < text.size() && is_name_char(text[i])) ++i;
    if (i == name_start) return std::nullopt;
    tag.name = text.substr(name_start, i - name_start);

    // Attributes: name="value", whitespace tolerated.
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= text.size()) return std::nullopt;
        if (text[i] == '>') {
            tag.span = {pos, i + 1};
            return tag;
        }
        std::size_t attr_start = i;
        while (i < text.size() && is_name_char(text[i])) ++i;
        if (i == attr_start) return std::nullopt;
        std::string attr = text.substr(attr_start, i - attr_start);
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= text.size() || text[i] != '=') return std::nullopt;
        ++i;
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= text.size() || text[i] != '"') return std::nullopt;
        std::size_t val_start = ++i;
        while (i < text.size() && text[i] != '"') ++i;
        if (i >= text.size()) return std::nullopt;
        tag.attrs[attr] = text.substr(val_start, i - val_start);
        ++i;
    }
    return std::nullopt;
}

bool is_structural(const std::string& name) {
    static const char* kNames[] = {
        "think",           "structured_plan", "deep_analysis", "rubric",
        "research_plan",   "call_tool",       "state_evaluation",
        "review",          "rubric_review",   "writing_plan",  "answer",
        "cite",            "tool_output",
    };
    for (const char* n : kNames)
        if (name == n) return true;
    return false;
}

struct Block {
    std::string name;
    Span open;     // open tag span
    Span close;    // close tag span
    Span content;  // between tags
    int depth = 0;
    std::map<std::string, std::string> attrs;
    Span full() const { return {open.begin, close.end}; }
};

}  // namespace

std::string format_label_name(FormatLabel f) {
    switch (f) {
        case FormatLabel::Exact: return "exact";
        case FormatLabel::ShortForm: return "short";
        case FormatLabel::LongForm: return "long";
    }
    return "long";
}

FormatLabel format_label_from_name(const std::string& name) {
    if (name == "exact") return FormatLabel::Exact;
    if (name == "short") return FormatLabel::ShortForm;
    if (name == "long") return FormatLabel::LongForm;
    throw ConfigError("unknown format label: " + name);
}

std::string tool_name_string(ToolName t) {
    return t == ToolName::GoogleSearch ? "google_search" : "snippet_search";
}

std::optional<ToolName> normalize_tool_name(std::string_view raw) {
    std::string low;
    low.reserve(raw.size());
    for (char c : raw)
        low.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (low == "google_search" || low.find("google") != std::string::npos ||
        low.find("web") != std::string::npos)
        return ToolName::GoogleSearch;
    if (low == "snippet_search" || low.find("snippet") != std::string::npos ||
        low.find("scholar") != std::string::npos)
        return ToolName::SnippetSearch;
    return std::nullopt;
}

std::string violation_name(Violation v) {
    switch (v) {
        case Violation::MissingAnswerTag: return "MissingAnswerTag";
        case Violation::NoToolCallNonFinal: return "NoToolCallNonFinal";
        case Violation::MissingStructuralElement: return "MissingStructuralElement";
        case Violation::ConsecutiveToolErrors: return "ConsecutiveToolErrors";
        case Violation::MaxRoundsExceeded: return "MaxRoundsExceeded";
        case Violation::MalformedCitation: return "MalformedCitation";
    }
    return "?";
}

std::string ValidationReport::to_json() const {
    nlohmann::json j;
    j["accepted"] = accepted;
    auto arr = nlohmann::json::array();
    for (auto v : violations) arr.push_back(violation_name(v));
    j["violations"] = arr;
    return j.dump();
}

std::string ParsedTrajectory::stage_text(Stage s) const {
    const auto& sp = stage_span(s).span;
    if (sp.empty()) return {};
    return text.substr(sp.begin, sp.size());
}

ParsedTrajectory parse_trajectory(const RawTrajectory& raw) {
    const std::string& text = raw.text;
    if (text.empty()) throw ParseError("empty trajectory text");

    ParsedTrajectory pt;
    pt.text = text;

    // Lex every tag in the document.
    std::vector<LexedTag> tags;
    for (std::size_t i = 0; i < text.size();) {
        if (text[i] != '<') {
            ++i;
            continue;
        }
        auto t = lex_tag(text, i);
        if (t) {
            i = t->span.end;
            if (is_structural(t->name)) tags.push_back(std::move(*t));
        } else {
            ++i;
        }
    }

    // Pass 1: tool_output regions. Their content is environment text and is
    // opaque to the structural scan.
    std::vector<Span> tool_regions;
    {
        std::optional<std::size_t> open_pos;
        for (const auto& t : tags) {
            if (t.name != "tool_output") continue;
            if (!t.closing) {
                if (open_pos) throw ParseError("MalformedMarkup: nested <tool_output>");
                open_pos = t.span.begin;
            } else {
                if (!open_pos) throw ParseError("MalformedMarkup: stray </tool_output>");
                tool_regions.push_back({*open_pos, t.span.end});
                open_pos.reset();
            }
        }
        if (open_pos) throw ParseError("MalformedMarkup: unclosed <tool_output>");
    }
    pt.tool_outputs = tool_regions;
    auto in_tool_region = [&](std::size_t pos) {
        for (const auto& r : tool_regions)
            if (r.contains(pos)) return true;
        return false;
    };

    // Pass 2: match open/close pairs outside tool outputs. <answer> without a
    // close and <cite> problems are tolerated; everything else must balance.
    std::vector<Block> blocks;
    std::optional<Span> answer_open;
    std::optional<Span> answer_close;
    {
        struct Open {
            LexedTag tag;
            std::size_t depth;
        };
        std::vector<Open> stack;
        int cite_depth_violations = 0;
        for (const auto& t : tags) {
            if (t.name == "tool_output" || in_tool_region(t.span.begin)) continue;
            if (t.name == "answer") {
                if (!t.closing) {
                    if (answer_open)
                        throw ParseError("MalformedMarkup: multiple <answer> tags");
                    answer_open = t.span;
                } else {
                    if (!answer_open || answer_close)
                        throw ParseError("MalformedMarkup: stray </answer>");
                    answer_close = t.span;
                }
                continue;
            }
            if (!t.closing) {
                stack.push_back({t, stack.size()});
            } else {
                if (stack.empty() || stack.back().tag.name != t.name) {
                    if (t.name == "cite") {
                        ++cite_depth_violations;
                        continue;
                    }
                    throw ParseError("MalformedMarkup: unbalanced </" + t.name + ">");
                }
                Block b;
                b.name = t.name;
                b.open = stack.back().tag.span;
                b.close = t.span;
                b.content = {b.open.end, b.close.begin};
                b.depth = static_cast<int>(stack.back().depth);
                b.attrs = stack.back().tag.attrs;
                stack.pop_back();
                blocks.push_back(std::move(b));
            }
        }
        while (!stack.empty()) {
            if (stack.back().tag.name == "cite") {
                ++cite_depth_violations;
                stack.pop_back();
                continue;
            }
            throw ParseError("MalformedMarkup: unclosed <" + stack.back().tag.name + ">");
        }
        pt.malformed_citations += cite_depth_violations;
    }
    std::sort(blocks.begin(), blocks.end(),
              [](const Block& a, const Block& b) { return a.open.begin < b.open.begin; });

    pt.has_answer_open = answer_open.has_value();
    pt.has_answer_close = answer_close.has_value();

    // Turn segmentation: agent emissions are the text between tool outputs.
    std::vector<Span> segments;
    {
        std::size_t cursor = 0;
        for (const auto& r : tool_regions) {
            segments.push_back({cursor, r.begin});
            cursor = r.end;
        }
        segments.push_back({cursor, text.size()});
    }

    auto top_blocks_in = [&](const Span& seg, const std::string& name) {
        std::vector<const Block*> out;
        for (const auto& b : blocks)
            if (b.depth == 0 && b.name == name && b.open.begin >= seg.begin &&
                b.open.begin < seg.end)
                out.push_back(&b);
        return out;
    };

    for (std::size_t s = 0; s < segments.size(); ++s) {
        const Span seg = segments[s];
        Turn turn;
        turn.index = static_cast<int>(s) + 1;
        auto thinks = top_blocks_in(seg, "think");
        if (!thinks.empty()) turn.think_span = thinks.front()->full();
        for (const char* body : {"structured_plan", "state_evaluation", "review"}) {
            for (const Block* b : top_blocks_in(seg, body))
                turn.body_spans.push_back({b->name, b->full()});
        }
        std::sort(turn.body_spans.begin(), turn.body_spans.end(),
                  [](const TaggedSpan& a, const TaggedSpan& b) {
                      return a.span.begin < b.span.begin;
                  });

        auto calls = top_blocks_in(seg, "call_tool");
        bool answer_here =
            answer_open && answer_open->begin >= seg.begin && answer_open->begin < seg.end;
        if (calls.size() > 1 || (!calls.empty() && answer_here))
            throw ParseError("MalformedMarkup: more than one action in turn " +
                             std::to_string(turn.index));
        if (answer_here && s + 1 != segments.size())
            throw ParseError("MalformedMarkup: <answer> before final turn");
        if (!calls.empty()) {
            const Block* c = calls.front();
            ToolCall tc;
            tc.raw_span = c->full();
            auto it = c->attrs.find("name");
            tc.raw_name = it == c->attrs.end() ? "" : it->second;
            tc.query = trim(text.substr(c->content.begin, c->content.size()));
            auto canon = normalize_tool_name(tc.raw_name);
            if (canon && !tc.query.empty()) {
                tc.name = *canon;
                tc.valid = true;
            }
            turn.tool_call = tc;
        }
        if (answer_here) turn.answer_span = Span{answer_open->begin, text.size()};
        pt.turns.push_back(std::move(turn));
    }

    // Round bookkeeping: turn i is an error round when the tool output that
    // follows it carries the error marker.
    pt.round_error.assign(pt.turns.size(), false);
    for (std::size_t s = 0; s < tool_regions.size(); ++s) {
        const auto& r = tool_regions[s];
        std::string_view payload(text.data() + r.begin, r.size());
        auto lt = payload.find('>');
        auto close = payload.rfind('<');
        if (lt != std::string_view::npos && close != std::string_view::npos && close > lt) {
            auto body = trim_view(payload.substr(lt + 1, close - lt - 1));
            if (body.starts_with(kToolErrorMarker)) pt.round_error[s] = true;
        }
    }
    for (const auto& t : pt.turns)
        if (t.tool_call) ++pt.tool_rounds;

    // Structural elements.
    const Block* first_plan = nullptr;
    const Block* review = nullptr;
    for (const auto& b : blocks) {
        if (!first_plan && b.name == "structured_plan" && b.depth == 0) first_plan = &b;
        if (!review && b.name == "review" && b.depth == 0) review = &b;
    }
    if (first_plan && !pt.turns.empty() &&
        first_plan->open.begin >= segments[0].begin &&
        first_plan->open.begin < segments[0].end) {
        pt.has_plan = true;
        for (const auto& b : blocks) {
            if (b.open.begin < first_plan->content.begin ||
                b.open.begin >= first_plan->content.end)
                continue;
            if (b.name == "deep_analysis") pt.plan_has_deep_analysis = true;
            if (b.name == "rubric") pt.plan_has_rubric = true;
        }
    }
    pt.has_review = review != nullptr;

    pt.turn_has_state_eval.assign(pt.turns.size(), false);
    for (std::size_t s = 0; s < pt.turns.size(); ++s)
        for (const auto& b : pt.turns[s].body_spans)
            if (b.tag == "state_evaluation") pt.turn_has_state_eval[s] = true;

    // Self-rubrics: the initial plan rubric plus revision rubrics, in order.
    for (const auto& b : blocks) {
        if (b.name != "rubric") continue;
        bool inside_plan = false;
        for (const auto& p : blocks)
            if (p.name == "structured_plan" && p.content.begin <= b.open.begin &&
                b.close.end <= p.content.end)
                inside_plan = true;
        if (inside_plan) pt.self_rubrics.push_back(b.content);
    }

    // Stage spans per the scoring-prompt boundary rules.
    Span sp1, sp2, sp3, sp4;
    if (pt.has_plan) sp1 = {0, first_plan->close.end};
    if (review) {
        // Stage 3 starts at the last think block before <review>, or at the
        // review tag itself when the final turn has none. Thinks from earlier
        // research turns sit before the last tool output and do not count.
        std::size_t floor3 = tool_regions.empty() ? 0 : tool_regions.back().end;
        if (first_plan) floor3 = std::max(floor3, first_plan->close.end);
        std::size_t start3 = review->open.begin;
        for (const auto& b : blocks)
            if (b.name == "think" && b.depth == 0 && b.open.begin < review->open.begin &&
                b.open.begin >= floor3 &&
                (start3 == review->open.begin || b.open.begin > start3))
                start3 = b.open.begin;
        sp3 = {start3, review->close.end};
    }
    if (pt.has_plan) {
        std::size_t end2 = sp3.empty()
                               ? (answer_open ? answer_open->begin : text.size())
                               : sp3.begin;
        if (end2 >= sp1.end) sp2 = {sp1.end, end2};
    }
    if (answer_open) sp4 = {answer_open->begin, text.size()};

    pt.stages[0] = {Stage::Plan, sp1, {}};
    pt.stages[1] = {Stage::Research, sp2, {}};
    pt.stages[2] = {Stage::Review, sp3, {}};
    pt.stages[3] = {Stage::Answer, sp4, {}};

    // Pseudo-tokens: whitespace-delimited runs outside tool outputs, each
    // assigned to the stage whose span contains its start offset.
    {
        std::size_t i = 0;
        std::size_t region_idx = 0;
        while (i < text.size()) {
            if (region_idx < tool_regions.size() && i >= tool_regions[region_idx].begin) {
                i = tool_regions[region_idx].end;
                ++region_idx;
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(text[i]))) {
                ++i;
                continue;
            }
            std::size_t start = i;
            std::size_t limit = region_idx < tool_regions.size()
                                    ? tool_regions[region_idx].begin
                                    : text.size();
            while (i < limit && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            int tok = static_cast<int>(pt.tokens.size());
            pt.tokens.push_back({start, i});
            for (auto& st : pt.stages)
                if (st.span.contains(start)) {
                    st.token_block.push_back(tok);
                    break;
                }
        }
    }

    // Citations: cite blocks in the answer region.
    if (answer_open) {
        for (const auto& b : blocks) {
            if (b.name != "cite" || b.open.begin < answer_open->begin) continue;
            auto it = b.attrs.find("id");
            std::string ids = it == b.attrs.end() ? "" : it->second;
            std::string claim = trim(text.substr(b.content.begin, b.content.size()));
            std::vector<std::string> parts;
            std::stringstream ss(ids);
            std::string part;
            while (std::getline(ss, part, ',')) {
                auto id = trim(part);
                if (!id.empty()) parts.push_back(id);
            }
            if (parts.empty() || claim.empty()) {
                ++pt.malformed_citations;
                continue;
            }
            for (auto& id : parts) pt.citations.push_back({id, b.content});
        }
    }

    return pt;
}

ValidationReport validate(const ParsedTrajectory& pt, int max_rounds) {
    ValidationReport report;
    auto add = [&](Violation v) {
        if (std::find(report.violations.begin(), report.violations.end(), v) ==
            report.violations.end())
            report.violations.push_back(v);
    };

    if (!pt.has_answer_open || !pt.has_answer_close) add(Violation::MissingAnswerTag);

    for (std::size_t s = 0; s + 1 < pt.turns.size(); ++s) {
        const auto& t = pt.turns[s];
        if (!t.tool_call || !t.tool_call->valid) add(Violation::NoToolCallNonFinal);
    }

    if (!pt.has_plan || !pt.plan_has_deep_analysis || !pt.plan_has_rubric)
        add(Violation::MissingStructuralElement);
    if (!pt.has_review) add(Violation::MissingStructuralElement);
    for (std::size_t s = 1; s < pt.turns.size(); ++s)
        if (!pt.turn_has_state_eval[s]) add(Violation::MissingStructuralElement);

    for (std::size_t s = 0; s + 1 < pt.round_error.size(); ++s)
        if (pt.round_error[s] && pt.round_error[s + 1]) add(Violation::ConsecutiveToolErrors);

    if (pt.tool_rounds > max_rounds) add(Violation::MaxRoundsExceeded);

    if (pt.malformed_citations > 0) add(Violation::MalformedCitation);

    report.accepted = report.violations.empty();
    return report;
}

std::vector<CitationText> extract_citations(const ParsedTrajectory& pt) {
    std::vector<CitationText> out;
    out.reserve(pt.citations.size());
    for (const auto& c : pt.citations)
        out.push_back({c.snippet_id, trim(pt.text.substr(c.claim.begin, c.claim.size()))});
    return out;
}

std::vector<std::string> extract_self_rubrics(const ParsedTrajectory& pt) {
    std::vector<std::string> out;
    out.reserve(pt.self_rubrics.size());
    for (const auto& s : pt.self_rubrics)
        out.push_back(trim(pt.text.substr(s.begin, s.size())));
    return out;
}

std::vector<RawTrajectory> load_trajectory_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open trajectory file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string content = buf.str();

    std::vector<RawTrajectory> out;
    auto first = trim_view(content);
    if (!first.empty() && first.front() == '{') {
        std::stringstream lines(content);
        std::string line;
        while (std::getline(lines, line)) {
            if (trim_view(line).empty()) continue;
            auto j = nlohmann::json::parse(line);
            RawTrajectory rt;
            rt.query = j.value("query", "");
            rt.text = j.at("text").get<std::string>();
            rt.format_label = format_label_from_name(j.value("format_label", "long"));
            out.push_back(std::move(rt));
        }
    } else {
        out.push_back({content, "", FormatLabel::LongForm});
    }
    return out;
}

}  // namespace stagerl::scaffold
