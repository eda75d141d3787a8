#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "homeodrive/geometry.hpp"
#include "homeodrive/risk_field.hpp"
#include "homeodrive/world.hpp"

namespace homeo {
namespace lang {

struct ParseError : std::runtime_error {
    std::size_t offset;
    ParseError(std::size_t off, const std::string& msg)
        : std::runtime_error("parse error at offset " + std::to_string(off) + ": " + msg),
          offset(off) {}
};

struct OpenEndedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class PredicateKind : std::uint8_t { path_clear, obstacle_static, obstacle_moving, time_elapsed };

struct Predicate {
    PredicateKind kind = PredicateKind::path_clear;
    double seconds = 0.0;   // time_elapsed only
    bool operator==(const Predicate&) const = default;
};

struct Sentence;

struct SetSpeed {
    double kph = 0.0;
    bool operator==(const SetSpeed&) const = default;
};
struct DriveForward {
    std::optional<double> duration_s;
    std::optional<double> distance_m;
    bool open_ended() const { return !duration_s && !distance_m; }
    bool operator==(const DriveForward&) const = default;
};
struct BrakeSteady {
    double target_kph = 0.0;
    std::optional<double> over_s;
    std::optional<double> over_m;
    bool operator==(const BrakeSteady&) const = default;
};
struct Hold {
    double duration_s = 0.0;
    bool operator==(const Hold&) const = default;
};
struct Turn {
    double angle_deg = 0.0;   // relative, [-180, 180]
    bool operator==(const Turn&) const = default;
};
struct Reverse {
    bool operator==(const Reverse&) const = default;
};
struct Reroute {
    bool alternate = true;
    std::string node;   // used when alternate == false
    bool operator==(const Reroute&) const = default;
};
struct SendAlert {
    std::optional<Vec2> position;
    bool operator==(const SendAlert&) const = default;
};
struct IfWhen {
    Predicate pred;
    std::shared_ptr<Sentence> then_branch;
    std::shared_ptr<Sentence> else_branch;
    bool operator==(const IfWhen& o) const;
};

using Command =
    std::variant<SetSpeed, DriveForward, BrakeSteady, Hold, Turn, Reverse, Reroute, SendAlert, IfWhen>;

/// A parsed program in the car language.
struct Sentence {
    std::vector<Command> commands;
    std::string source_text;
    std::int64_t created_tick = 0;

    bool operator==(const Sentence& o) const { return commands == o.commands; }
    bool empty() const { return commands.empty(); }
};

inline bool IfWhen::operator==(const IfWhen& o) const {
    auto eq = [](const std::shared_ptr<Sentence>& a, const std::shared_ptr<Sentence>& b) {
        if (!a || !b) return (!a || a->empty()) && (!b || b->empty());
        return *a == *b;
    };
    return pred == o.pred && eq(then_branch, o.then_branch) && eq(else_branch, o.else_branch);
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

struct Token {
    enum class Kind { word, number, lbrace, rbrace, colon } kind = Kind::word;
    std::string word;     // lowercased
    double number = 0.0;
    std::string unit;     // letters glued to a number ("30kph")
    std::size_t offset = 0;
};

inline bool is_unit_s(const std::string& u) {
    return u == "s" || u == "sec" || u == "secs" || u == "second" || u == "seconds";
}
inline bool is_unit_m(const std::string& u) {
    return u == "m" || u == "meter" || u == "meters" || u == "metre" || u == "metres";
}
inline bool is_unit_deg(const std::string& u) {
    return u == "deg" || u == "degree" || u == "degrees";
}

inline std::vector<Token> tokenize_clause(const std::string& text, std::size_t base) {
    std::vector<Token> out;
    std::size_t i = 0;
    auto lower = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
    while (i < text.size()) {
        char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '{') {
            // Braced sub-sentence: emit only the delimiters; the interior is
            // re-parsed recursively from the raw text.
            Token open;
            open.kind = Token::Kind::lbrace;
            open.offset = base + i;
            out.push_back(open);
            int depth = 0;
            std::size_t j = i;
            for (; j < text.size(); ++j) {
                if (text[j] == '{') ++depth;
                if (text[j] == '}') {
                    --depth;
                    if (depth == 0) break;
                }
            }
            if (depth != 0) throw ParseError(base + i, "unbalanced '{'");
            Token close;
            close.kind = Token::Kind::rbrace;
            close.offset = base + j;
            out.push_back(close);
            i = j + 1;
            continue;
        }
        if (c == '}' || c == ':') {
            Token t;
            t.kind = c == '}' ? Token::Kind::rbrace : Token::Kind::colon;
            t.offset = base + i;
            out.push_back(t);
            ++i;
            continue;
        }
        bool neg_number = (c == '-' && i + 1 < text.size() &&
                           (std::isdigit(static_cast<unsigned char>(text[i + 1])) || text[i + 1] == '.'));
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || neg_number) {
            std::size_t start = i;
            if (neg_number) ++i;
            while (i < text.size() &&
                   (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.'))
                ++i;
            Token t;
            t.kind = Token::Kind::number;
            t.offset = base + start;
            std::string num = text.substr(start, i - start);
            auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), t.number);
            if (ec != std::errc{} || p != num.data() + num.size())
                throw ParseError(base + start, "bad number '" + num + "'");
            std::size_t ustart = i;
            while (i < text.size() && std::isalpha(static_cast<unsigned char>(text[i]))) ++i;
            for (std::size_t k = ustart; k < i; ++k) t.unit += lower(text[k]);
            out.push_back(t);
            continue;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = i;
            while (i < text.size() &&
                   (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_'))
                ++i;
            Token t;
            t.offset = base + start;
            for (std::size_t k = start; k < i; ++k) t.word += lower(text[k]);
            out.push_back(t);
            continue;
        }
        throw ParseError(base + i, std::string("unexpected character '") + c + "'");
    }
    return out;
}

/// Split on top-level commas; braces protect nested sentences. A '.' outside
/// a number terminates the sentence.
inline std::vector<std::pair<std::string, std::size_t>> split_clauses(const std::string& text) {
    std::vector<std::pair<std::string, std::size_t>> clauses;
    std::string cur;
    std::size_t cur_start = 0;
    int depth = 0;
    bool terminated = false;
    auto flush = [&]() {
        std::size_t a = cur.find_first_not_of(" \t\r\n");
        if (a != std::string::npos) clauses.emplace_back(cur, cur_start);
        cur.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (terminated && !std::isspace(static_cast<unsigned char>(c)))
            throw ParseError(i, "content after sentence terminator");
        if (terminated) continue;
        if (c == '{') ++depth;
        if (c == '}') {
            --depth;
            if (depth < 0) throw ParseError(i, "unbalanced '}'");
        }
        if (depth == 0 && c == ',') {
            flush();
            cur_start = i + 1;
            continue;
        }
        bool in_number = i > 0 && std::isdigit(static_cast<unsigned char>(text[i - 1])) &&
                         i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1]));
        if (depth == 0 && (c == '.' || c == '\n') && !(c == '.' && in_number)) {
            terminated = true;
            continue;
        }
        if (cur.empty()) cur_start = i;
        cur += c;
    }
    if (depth != 0) throw ParseError(text.size(), "unbalanced '{'");
    flush();
    return clauses;
}

struct Cursor {
    const std::vector<Token>& toks;
    std::size_t pos = 0;

    bool done() const { return pos >= toks.size(); }
    const Token& peek() const { return toks[pos]; }
    const Token& take() { return toks[pos++]; }
    bool at_word(std::string_view w) const {
        return !done() && peek().kind == Token::Kind::word && peek().word == w;
    }
    bool eat_word(std::string_view w) {
        if (!at_word(w)) return false;
        ++pos;
        return true;
    }
    std::size_t offset() const { return done() ? (toks.empty() ? 0 : toks.back().offset) : peek().offset; }
};

} // namespace detail

Sentence parse(const std::string& text);

namespace detail {

inline double require_nonneg(double v, std::size_t off, const char* what) {
    if (v < 0) throw ParseError(off, std::string("negative ") + what);
    return v;
}

/// Quantity = number + unit; returns (value, 's'|'m'|'d'|'k'|'?').
struct Quantity {
    double value = 0.0;
    char unit = '?';
    std::size_t offset = 0;
};

inline std::optional<Quantity> try_quantity(Cursor& c) {
    if (c.done() || c.peek().kind != Token::Kind::number) return std::nullopt;
    Token t = c.take();
    Quantity q;
    q.value = t.number;
    q.offset = t.offset;
    std::string unit = t.unit;
    if (unit.empty() && !c.done() && c.peek().kind == Token::Kind::word) {
        const std::string& w = c.peek().word;
        if (is_unit_s(w) || is_unit_m(w) || is_unit_deg(w) || w == "kph") {
            unit = w;
            c.take();
        }
    }
    if (is_unit_s(unit))
        q.unit = 's';
    else if (is_unit_m(unit))
        q.unit = 'm';
    else if (is_unit_deg(unit))
        q.unit = 'd';
    else if (unit == "kph")
        q.unit = 'k';
    else if (unit.empty())
        q.unit = '?';
    else
        throw ParseError(q.offset, "unknown unit '" + unit + "'");
    return q;
}

inline Predicate parse_predicate(Cursor& c) {
    if (c.done() || c.peek().kind != Token::Kind::word)
        throw ParseError(c.offset(), "expected predicate");
    Token t = c.take();
    Predicate p;
    if (t.word == "path_clear")
        p.kind = PredicateKind::path_clear;
    else if (t.word == "obstacle_static")
        p.kind = PredicateKind::obstacle_static;
    else if (t.word == "obstacle_moving")
        p.kind = PredicateKind::obstacle_moving;
    else if (t.word == "time_elapsed") {
        p.kind = PredicateKind::time_elapsed;
        auto q = try_quantity(c);
        if (!q || (q->unit != 's' && q->unit != '?'))
            throw ParseError(c.offset(), "time_elapsed needs a duration");
        p.seconds = require_nonneg(q->value, q->offset, "duration");
    } else
        throw ParseError(t.offset, "unknown predicate '" + t.word + "'");
    return p;
}

/// Collect a braced sub-sentence's raw text from the original clause string.
inline std::string collect_braced(const std::string& clause, std::size_t clause_base, Cursor& c) {
    if (c.done() || c.peek().kind != Token::Kind::lbrace)
        throw ParseError(c.offset(), "expected '{'");
    std::size_t open_off = c.peek().offset - clause_base;
    int depth = 0;
    std::size_t i = open_off;
    for (; i < clause.size(); ++i) {
        if (clause[i] == '{') ++depth;
        if (clause[i] == '}') {
            --depth;
            if (depth == 0) break;
        }
    }
    if (depth != 0) throw ParseError(clause_base + open_off, "unbalanced '{'");
    // advance tokens past the braced region
    while (!c.done() && c.peek().offset <= clause_base + i) c.take();
    return clause.substr(open_off + 1, i - open_off - 1);
}

} // namespace detail

/// Parse one sentence: comma-separated clauses, case-insensitive keywords,
/// newline- or period-terminated. Accepts every proto-sentence form from
/// the branching-scenario corpus plus the canonical forms render() emits.
inline Sentence parse(const std::string& text) {
    using namespace detail;
    Sentence s;
    s.source_text = text;

    auto clauses = split_clauses(text);
    // Pending slot: which command is still accepting quantities/modifiers.
    auto open_drive = [&]() -> DriveForward* {
        if (s.commands.empty()) return nullptr;
        return std::get_if<DriveForward>(&s.commands.back());
    };
    auto open_hold = [&]() -> Hold* {
        if (s.commands.empty()) return nullptr;
        return std::get_if<Hold>(&s.commands.back());
    };
    bool hold_missing = false;
    std::size_t hold_missing_pos = 0;

    for (auto& [clause, base] : clauses) {
        auto toks = tokenize_clause(clause, base);
        Cursor c{toks};
        if (c.done()) continue;

        // "at N seconds:" labels are timeline annotations; ignore them.
        if (c.at_word("at") && toks.size() >= 3) {
            Cursor look = c;
            look.take();
            auto q = try_quantity(look);
            if (q && q->unit == 's' && !look.done() && look.peek().kind == Token::Kind::colon) {
                look.take();
                c.pos = look.pos;
            }
        }
        if (c.done()) continue;

        const Token head = c.peek();
        if (head.kind == Token::Kind::number) {
            // bare quantity clause: fills the open command's slot
            auto q = try_quantity(c);
            if (!c.done()) throw ParseError(c.offset(), "unexpected token after quantity");
            require_nonneg(q->value, q->offset, "quantity");
            if (DriveForward* d = open_drive()) {
                if (q->unit == 'm') {
                    if (d->distance_m || d->duration_s) throw ParseError(q->offset, "duplicate quantity");
                    d->distance_m = q->value;
                } else {
                    if (d->distance_m || d->duration_s) throw ParseError(q->offset, "duplicate quantity");
                    d->duration_s = q->value;
                }
                continue;
            }
            if (Hold* h = open_hold(); h && hold_missing) {
                h->duration_s = q->value;
                hold_missing = false;
                continue;
            }
            throw ParseError(q->offset, "dangling quantity");
        }
        if (head.kind != Token::Kind::word) throw ParseError(head.offset, "expected a command verb");

        std::string verb = c.take().word;

        if (verb == "drive" || verb == "maintain") {
            // "drive [forward]" / "maintain speed [for]" + optional quantity
            c.eat_word("forward");
            c.eat_word("speed");
            c.eat_word("for");
            DriveForward d;
            if (auto q = try_quantity(c)) {
                require_nonneg(q->value, q->offset, "quantity");
                if (q->unit == 'm')
                    d.distance_m = q->value;
                else
                    d.duration_s = q->value;
            }
            if (!c.done()) throw ParseError(c.offset(), "unexpected token in drive clause");
            s.commands.emplace_back(d);
        } else if (verb == "speed" || verb == "slow" || verb == "reduce" || verb == "set") {
            // "speed [to] N kph" family -> SetSpeed. Trailing speed clauses
            // modify an open drive command and hoist before it ("Drive
            // forward, 3.5 seconds, speed 30kph"); the canonical "set speed"
            // spelling never hoists.
            bool modifier = verb != "set";
            c.eat_word("speed");
            c.eat_word("to");
            auto q = try_quantity(c);
            if (!q || (q->unit != 'k' && q->unit != '?'))
                throw ParseError(c.offset(), "speed needs a kph value");
            if (!c.done()) throw ParseError(c.offset(), "unexpected token in speed clause");
            SetSpeed cmd{require_nonneg(q->value, q->offset, "speed")};
            if (modifier && open_drive())
                s.commands.insert(s.commands.end() - 1, Command{cmd});
            else
                s.commands.emplace_back(cmd);
        } else if (verb == "stop") {
            if (!c.done()) throw ParseError(c.offset(), "unexpected token after stop");
            s.commands.emplace_back(SetSpeed{0.0});
        } else if (verb == "brake") {
            c.eat_word("steadily");
            BrakeSteady b;
            if (c.eat_word("until")) {
                if (!c.eat_word("speed") || !c.eat_word("is"))
                    throw ParseError(c.offset(), "expected 'until speed is N'");
            }
            if (auto q = try_quantity(c)) {
                if (q->unit != 'k' && q->unit != '?')
                    throw ParseError(q->offset, "brake target must be kph");
                b.target_kph = require_nonneg(q->value, q->offset, "speed");
            }
            if (!c.eat_word("over")) throw ParseError(c.offset(), "brake requires 'over'");
            auto q = try_quantity(c);
            if (!q) throw ParseError(c.offset(), "brake 'over' needs a quantity");
            require_nonneg(q->value, q->offset, "quantity");
            if (q->unit == 'm')
                b.over_m = q->value;
            else if (q->unit == 's' || q->unit == '?')
                b.over_s = q->value;
            else
                throw ParseError(q->offset, "brake 'over' must be seconds or meters");
            if (!c.done()) throw ParseError(c.offset(), "unexpected token in brake clause");
            s.commands.emplace_back(b);
        } else if (verb == "hold") {
            c.eat_word("position");
            Hold h;
            if (auto q = try_quantity(c)) {
                if (q->unit != 's' && q->unit != '?')
                    throw ParseError(q->offset, "hold duration must be seconds");
                h.duration_s = require_nonneg(q->value, q->offset, "duration");
                s.commands.emplace_back(h);
            } else {
                s.commands.emplace_back(h);
                hold_missing = true;
                hold_missing_pos = head.offset;
            }
            if (!c.done()) throw ParseError(c.offset(), "unexpected token in hold clause");
        } else if (verb == "wait") {
            auto q = try_quantity(c);
            if (!q || (q->unit != 's' && q->unit != '?'))
                throw ParseError(c.offset(), "wait needs a duration");
            if (!c.done()) throw ParseError(c.offset(), "unexpected token in wait clause");
            double dur = require_nonneg(q->value, q->offset, "duration");
            if (Hold* h = open_hold(); h && hold_missing) {
                h->duration_s = dur;
                hold_missing = false;
            } else {
                s.commands.emplace_back(Hold{dur});
            }
        } else if (verb == "turn") {
            auto q = try_quantity(c);
            if (!q || (q->unit != 'd' && q->unit != '?'))
                throw ParseError(c.offset(), "turn needs an angle in degrees");
            if (q->value < -180.0 || q->value > 180.0)
                throw ParseError(q->offset, "turn angle outside [-180, 180]");
            if (!c.done()) throw ParseError(c.offset(), "unexpected token in turn clause");
            s.commands.emplace_back(Turn{q->value});
        } else if (verb == "reverse") {
            c.eat_word("manoeuvre");
            c.eat_word("maneuver");
            if (!c.done()) throw ParseError(c.offset(), "unexpected token after reverse");
            s.commands.emplace_back(Reverse{});
        } else if (verb == "reroute") {
            c.eat_word("via");
            Reroute r;
            if (c.eat_word("alternate")) {
                c.eat_word("road");
                r.alternate = true;
            } else {
                if (c.done() || c.peek().kind != Token::Kind::word)
                    throw ParseError(c.offset(), "reroute needs 'alternate' or a waypoint id");
                r.alternate = false;
                r.node = c.take().word;
            }
            if (!c.done()) throw ParseError(c.offset(), "unexpected token in reroute clause");
            s.commands.emplace_back(r);
        } else if (verb == "send" || verb == "alert") {
            if (verb == "send" && !c.eat_word("alert"))
                throw ParseError(c.offset(), "expected 'send alert'");
            c.eat_word("of");
            c.eat_word("for");
            c.eat_word("hazard");
            SendAlert a;
            if (auto qx = try_quantity(c)) {
                auto qy = try_quantity(c);
                if (!qy) throw ParseError(c.offset(), "alert position needs two coordinates");
                a.position = Vec2{qx->value, qy->value};
            }
            if (!c.done()) throw ParseError(c.offset(), "unexpected token in alert clause");
            s.commands.emplace_back(a);
        } else if (verb == "if" || verb == "when") {
            IfWhen iw;
            iw.pred = parse_predicate(c);
            if (!c.eat_word("then")) throw ParseError(c.offset(), "expected 'then'");
            std::string then_text = collect_braced(clause, base, c);
            iw.then_branch = std::make_shared<Sentence>(parse(then_text));
            iw.else_branch = std::make_shared<Sentence>();
            if (c.eat_word("else")) {
                std::string else_text = collect_braced(clause, base, c);
                iw.else_branch = std::make_shared<Sentence>(parse(else_text));
            }
            if (!c.done()) throw ParseError(c.offset(), "unexpected token after conditional");
            s.commands.emplace_back(iw);
        } else {
            throw ParseError(head.offset, "unknown verb '" + verb + "'");
        }
    }
    if (hold_missing) throw ParseError(hold_missing_pos, "hold requires a duration");
    return s;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline std::string num(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

} // namespace detail

inline std::string render(const Sentence& s);

inline std::string render(const Command& cmd) {
    using detail::num;
    struct Visitor {
        std::string operator()(const SetSpeed& c) const {
            return "set speed " + num(c.kph) + "kph";
        }
        std::string operator()(const DriveForward& c) const {
            if (c.duration_s) return "drive " + num(*c.duration_s) + "s";
            if (c.distance_m) return "drive " + num(*c.distance_m) + "m";
            return "drive";
        }
        std::string operator()(const BrakeSteady& c) const {
            std::string out = "brake " + num(c.target_kph) + "kph over ";
            out += c.over_s ? num(*c.over_s) + "s" : num(c.over_m.value_or(0)) + "m";
            return out;
        }
        std::string operator()(const Hold& c) const { return "hold " + num(c.duration_s) + "s"; }
        std::string operator()(const Turn& c) const { return "turn " + num(c.angle_deg) + "deg"; }
        std::string operator()(const Reverse&) const { return "reverse"; }
        std::string operator()(const Reroute& c) const {
            return c.alternate ? "reroute alternate" : "reroute " + c.node;
        }
        std::string operator()(const SendAlert& c) const {
            if (!c.position) return "alert";
            return "alert " + num(c.position->x) + " " + num(c.position->y);
        }
        std::string operator()(const IfWhen& c) const {
            std::string pred;
            switch (c.pred.kind) {
                case PredicateKind::path_clear: pred = "path_clear"; break;
                case PredicateKind::obstacle_static: pred = "obstacle_static"; break;
                case PredicateKind::obstacle_moving: pred = "obstacle_moving"; break;
                case PredicateKind::time_elapsed:
                    pred = "time_elapsed " + num(c.pred.seconds) + "s";
                    break;
            }
            std::string out = "if " + pred + " then { " +
                              (c.then_branch ? render(*c.then_branch) : std::string()) + " }";
            if (c.else_branch && !c.else_branch->empty())
                out += " else { " + render(*c.else_branch) + " }";
            return out;
        }
    };
    return std::visit(Visitor{}, cmd);
}

/// Canonical text; parse(render(s)) is structurally s.
inline std::string render(const Sentence& s) {
    std::string out;
    for (const Command& c : s.commands) {
        if (!out.empty()) out += ", ";
        out += render(c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Durations & execution

inline constexpr double kReverseDurationS = 2.0;
inline constexpr double kReverseSpeedKph = 5.0;

/// Nominal span of one command given the commanded speed at entry (kph).
/// Returns the new commanded speed via out-param.
inline double command_duration(const Command& cmd, double& speed_kph, double turn_rate_deg_s) {
    struct Visitor {
        double& speed;
        double turn_rate;
        double operator()(const SetSpeed& c) {
            speed = c.kph;
            return 0.0;
        }
        double operator()(const DriveForward& c) {
            if (c.duration_s) return *c.duration_s;
            if (c.distance_m) {
                if (speed <= 0) throw OpenEndedError("distance command with zero commanded speed");
                return *c.distance_m / kph2mps(speed);
            }
            throw OpenEndedError("open-ended drive command");
        }
        double operator()(const BrakeSteady& c) {
            double entry = speed;
            speed = c.target_kph;
            if (c.over_s) return *c.over_s;
            double avg = kph2mps((entry + c.target_kph) / 2.0);
            if (avg <= 0) throw OpenEndedError("brake-over-distance from standstill");
            return c.over_m.value_or(0.0) / avg;
        }
        double operator()(const Hold& c) {
            speed = 0.0;
            return c.duration_s;
        }
        double operator()(const Turn& c) { return std::abs(c.angle_deg) / turn_rate; }
        double operator()(const Reverse&) {
            speed = 0.0;
            return kReverseDurationS;
        }
        double operator()(const Reroute&) { return 0.0; }
        double operator()(const SendAlert&) { return 0.0; }
        double operator()(const IfWhen& c) {
            double then_speed = speed, else_speed = speed;
            double then_d = 0.0, else_d = 0.0;
            if (c.then_branch)
                for (const Command& k : c.then_branch->commands)
                    then_d += command_duration(k, then_speed, turn_rate);
            if (c.else_branch)
                for (const Command& k : c.else_branch->commands)
                    else_d += command_duration(k, else_speed, turn_rate);
            speed = then_d >= else_d ? then_speed : else_speed;
            return std::max(then_d, else_d);
        }
    };
    return std::visit(Visitor{speed_kph, turn_rate_deg_s}, cmd);
}

/// Sum of command durations; distance commands convert via the commanded
/// (not actual) speed. Throws OpenEndedError when any command is unbounded.
inline double nominal_duration(const Sentence& s, double initial_speed_kph = 0.0,
                               double turn_rate_deg_s = 30.0) {
    double speed = initial_speed_kph;
    double total = 0.0;
    for (const Command& c : s.commands) total += command_duration(c, speed, turn_rate_deg_s);
    return total;
}

/// Context a sentence executes against.
struct ExecContext {
    const RiskField* field = nullptr;
    const SensorSnapshot* snapshot = nullptr;
    double elapsed_s = 0.0;   // since sentence start; used by time_elapsed
};

inline bool eval_predicate(const Predicate& p, const ExecContext& ctx) {
    switch (p.kind) {
        case PredicateKind::time_elapsed:
            return ctx.elapsed_s >= p.seconds;
        case PredicateKind::path_clear: {
            if (!ctx.field) return true;
            const RiskField& f = *ctx.field;
            double cone = deg2rad(15.0);
            for (int bin = 0; bin < f.bins(); ++bin) {
                if (std::abs(f.bin_center(bin)) > cone) continue;
                for (int shell = 0; shell < f.shells(); ++shell)
                    if (std::min(f.safety(Band::ground, shell, bin),
                                 f.safety(Band::car_level, shell, bin)) <= 0.5)
                        return false;
            }
            return true;
        }
        case PredicateKind::obstacle_static:
        case PredicateKind::obstacle_moving: {
            if (!ctx.snapshot) return false;
            const Detection* nearest = nullptr;
            for (const Detection& d : ctx.snapshot->detections) {
                if (d.kind == ObservableKind::marker || d.kind == ObservableKind::station) continue;
                if (d.distance > 15.0) continue;
                if (!nearest || d.distance < nearest->distance) nearest = &d;
            }
            if (!nearest) return false;
            bool moving = std::abs(nearest->radial_speed) > 0.1;
            return p.kind == PredicateKind::obstacle_moving ? moving : !moving;
        }
    }
    return false;
}

/// Output of interpreting a sentence at one instant.
struct StepResult {
    double target_speed_kph = 0.0;
    double steer_deg = 0.0;
    bool reverse = false;
    bool steering_locked = false;   // a Turn/Reverse owns the wheel right now
    bool terminal = false;          // elapsed beyond the sentence span
    bool fired_alert = false;       // zero-width commands crossed (executor only)
    std::optional<Reroute> fired_reroute;
};

namespace detail {

struct WalkState {
    std::map<std::string, bool>* latches = nullptr;   // IfWhen decisions, by path
    std::set<std::string>* fired = nullptr;           // zero-width commands already fired, by path
};

/// Piecewise interpretation. Recurses into latched conditional branches.
inline bool walk(const Sentence& s, double elapsed, const ExecContext& ctx, double& speed_kph,
                 double max_steer_deg, double turn_rate_deg_s, const std::string& path,
                 WalkState& ws, StepResult& out) {
    double t0 = 0.0;
    for (std::size_t i = 0; i < s.commands.size(); ++i) {
        const Command& cmd = s.commands[i];
        std::string cmd_key = path + "/" + std::to_string(i);

        if (const auto* iw = std::get_if<IfWhen>(&cmd)) {
            // Duration seen by the schedule is the latched branch's (or the
            // conservative max before latching).
            bool latched;
            if (ws.latches && ws.latches->count(cmd_key)) {
                latched = ws.latches->at(cmd_key);
            } else {
                latched = eval_predicate(iw->pred, ctx);
                if (ws.latches && elapsed >= t0) (*ws.latches)[cmd_key] = latched;
            }
            const Sentence& branch = latched ? *iw->then_branch : *iw->else_branch;
            double dur_speed = speed_kph;
            double dur = 0.0;
            bool open = false;
            try {
                for (const Command& k : branch.commands)
                    dur += command_duration(k, dur_speed, turn_rate_deg_s);
            } catch (const OpenEndedError&) {
                open = true;
            }
            if (open || (elapsed >= t0 && elapsed < t0 + dur)) {
                walk(branch, elapsed - t0, ctx, speed_kph, max_steer_deg, turn_rate_deg_s, cmd_key,
                     ws, out);
                return true;
            }
            // skip past a completed conditional: adopt the branch's exit speed
            double sk = speed_kph;
            for (const Command& k : branch.commands) command_duration(k, sk, turn_rate_deg_s);
            speed_kph = sk;
            t0 += dur;
            continue;
        }

        double entry_speed = speed_kph;
        double dur;
        bool open = false;
        try {
            dur = command_duration(cmd, speed_kph, turn_rate_deg_s);
        } catch (const OpenEndedError&) {
            dur = std::numeric_limits<double>::infinity();
            open = true;
        }

        if (dur == 0.0 && !open) {
            // zero-width command: fires once when the cursor reaches it
            if (elapsed >= t0 && ws.fired && ws.fired->insert(cmd_key).second) {
                if (std::holds_alternative<SendAlert>(cmd)) out.fired_alert = true;
                if (const auto* rr = std::get_if<Reroute>(&cmd)) out.fired_reroute = *rr;
            }
            t0 += dur;
            continue;
        }

        if (elapsed < t0 + dur) {
            struct Active {
                double entry;
                double t_rel;
                double dur;
                double max_steer;
                StepResult& out;
                double& speed;
                void operator()(const DriveForward&) const {
                    out.target_speed_kph = speed;
                    out.steer_deg = 0.0;
                }
                void operator()(const BrakeSteady& c) const {
                    double frac = dur > 0 ? t_rel / dur : 1.0;
                    out.target_speed_kph = entry + (c.target_kph - entry) * frac;
                    out.steer_deg = 0.0;
                }
                void operator()(const Hold&) const {
                    out.target_speed_kph = 0.0;
                    out.steer_deg = 0.0;
                }
                void operator()(const Turn& c) const {
                    out.target_speed_kph = entry;
                    out.steer_deg = std::clamp(c.angle_deg, -max_steer, max_steer);
                    out.steering_locked = true;
                }
                void operator()(const Reverse&) const {
                    out.target_speed_kph = kReverseSpeedKph;
                    out.steer_deg = 0.0;
                    out.reverse = true;
                    out.steering_locked = true;
                }
                void operator()(const SetSpeed&) const {}
                void operator()(const Reroute&) const {}
                void operator()(const SendAlert&) const {}
                void operator()(const IfWhen&) const {}
            };
            std::visit(Active{entry_speed, elapsed - t0, open ? 0.0 : dur, max_steer_deg, out,
                              speed_kph},
                       cmd);
            if (std::holds_alternative<DriveForward>(cmd) && open)
                out.target_speed_kph = entry_speed;
            return true;
        }
        t0 += dur;
    }
    return false;
}

} // namespace detail

/// Pure single-shot interpretation: what the sentence commands at `elapsed`.
/// Conditionals evaluate against the given context (no latch memory); the
/// persistent SentenceExecutor below adds the switch-once behaviour.
inline StepResult step_execute(const Sentence& s, double elapsed, const ExecContext& ctx,
                               double entry_speed_kph = 0.0, double max_steer_deg = 35.0,
                               double turn_rate_deg_s = 30.0) {
    StepResult out;
    double speed = entry_speed_kph;
    detail::WalkState ws;
    if (!detail::walk(s, elapsed, ctx, speed, max_steer_deg, turn_rate_deg_s, "", ws, out)) {
        out.terminal = true;          // beyond the span: hold at zero
        out.target_speed_kph = 0.0;
        out.steer_deg = 0.0;
    }
    return out;
}

/// Stateful executor: IfWhen branches latch exactly once, zero-width
/// commands (alerts, reroutes) fire exactly once.
class SentenceExecutor {
  public:
    SentenceExecutor() = default;
    SentenceExecutor(Sentence sentence, double entry_speed_kph, double max_steer_deg = 35.0,
                     double turn_rate_deg_s = 30.0)
        : sentence_(std::move(sentence)),
          entry_speed_(entry_speed_kph),
          max_steer_(max_steer_deg),
          turn_rate_(turn_rate_deg_s) {}

    const Sentence& sentence() const { return sentence_; }

    StepResult step(double elapsed, const ExecContext& ctx) {
        StepResult out;
        double speed = entry_speed_;
        detail::WalkState ws;
        ws.latches = &latches_;
        ws.fired = &fired_;
        if (!detail::walk(sentence_, elapsed, ctx, speed, max_steer_, turn_rate_, "", ws, out)) {
            out.terminal = true;
            out.target_speed_kph = 0.0;
            out.steer_deg = 0.0;
        }
        return out;
    }

  private:
    Sentence sentence_;
    double entry_speed_ = 0.0;
    double max_steer_ = 35.0;
    double turn_rate_ = 30.0;
    std::map<std::string, bool> latches_;
    std::set<std::string> fired_;
};

} // namespace lang
} // namespace homeo
