#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "homeodrive/action_lang.hpp"
#include "homeodrive/bytes.hpp"
#include "homeodrive/hash.hpp"
#include "homeodrive/risk_field.hpp"
#include "homeodrive/risk_table.hpp"
#include "homeodrive/world.hpp"

namespace homeo {

/// A crash/anomaly experience: the pre-incident sensing window, the fields
/// the car built from it, the metadata it attached, and the outcome.
struct IncidentRecord {
    std::string record_id;
    std::string car_id;
    EnvironmentProfile profile = EnvironmentProfile::urban;
    std::vector<SensorSnapshot> window;           // 10-20 s pre-incident
    std::vector<std::vector<std::uint8_t>> field_frames;   // binary frame dumps
    std::vector<std::string> active_sentences;    // rendered metadata over the window
    DamageVector outcome;
    double aggregate_before = 1.0;
    double aggregate_after = 1.0;
    bool unavoidable = false;
};

/// Human review of an incident: corrected field, alternate manoeuvres in car
/// language, and per-key risk overrides. Unavoidable incidents must be
/// excluded from training.
struct ValidationRecord {
    std::string validator;
    std::string record_id;
    std::vector<std::uint8_t> corrected_field;    // optional binary frame
    std::vector<std::string> alternate_manoeuvres;
    std::vector<std::pair<PatternKey, double>> risk_overrides;
    bool approved = false;
    bool exclude_from_training = false;
};

enum class PayloadKind : std::uint8_t { genesis = 0, incident = 1, validation = 2 };

struct LedgerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Canonical payload serialization (hashed byte-exactly)

inline std::vector<std::uint8_t> serialize(const IncidentRecord& r) {
    ByteWriter w;
    w.str(r.record_id);
    w.str(r.car_id);
    w.u8(static_cast<std::uint8_t>(r.profile));
    w.u32(static_cast<std::uint32_t>(r.window.size()));
    for (const SensorSnapshot& s : r.window) {
        w.i64(s.tick);
        w.f64(s.ego_position.x);
        w.f64(s.ego_position.y);
        w.f64(s.ego_heading);
        w.f64(s.ego_speed);
        w.u8(s.passenger_onboard ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(s.detections.size()));
        for (const Detection& d : s.detections) {
            w.u8(static_cast<std::uint8_t>(d.kind));
            w.f64(d.bearing);
            w.f64(d.distance);
            w.f64(d.radial_speed);
            w.u8(d.bands);
            w.f64(d.angular_halfwidth);
            w.str(d.entity_id);
        }
    }
    w.u32(static_cast<std::uint32_t>(r.field_frames.size()));
    for (const auto& frame : r.field_frames) {
        w.u32(static_cast<std::uint32_t>(frame.size()));
        w.raw(frame);
    }
    w.u32(static_cast<std::uint32_t>(r.active_sentences.size()));
    for (const std::string& s : r.active_sentences) w.str(s);
    w.f64(r.outcome.body);
    w.f64(r.outcome.wheels);
    w.f64(r.outcome.engine);
    w.f64(r.outcome.battery);
    w.f64(r.outcome.passenger_injury);
    w.f64(r.aggregate_before);
    w.f64(r.aggregate_after);
    w.u8(r.unavoidable ? 1 : 0);
    return w.take();
}

inline IncidentRecord deserialize_incident(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    IncidentRecord out;
    out.record_id = r.str();
    out.car_id = r.str();
    out.profile = static_cast<EnvironmentProfile>(r.u8());
    std::uint32_t n_snap = r.u32();
    for (std::uint32_t i = 0; i < n_snap; ++i) {
        SensorSnapshot s;
        s.tick = r.i64();
        s.ego_position.x = r.f64();
        s.ego_position.y = r.f64();
        s.ego_heading = r.f64();
        s.ego_speed = r.f64();
        s.passenger_onboard = r.u8() != 0;
        std::uint32_t n_det = r.u32();
        for (std::uint32_t k = 0; k < n_det; ++k) {
            Detection d;
            d.kind = static_cast<ObservableKind>(r.u8());
            d.bearing = r.f64();
            d.distance = r.f64();
            d.radial_speed = r.f64();
            d.bands = r.u8();
            d.angular_halfwidth = r.f64();
            d.entity_id = r.str();
            s.detections.push_back(d);
        }
        out.window.push_back(std::move(s));
    }
    std::uint32_t n_frames = r.u32();
    for (std::uint32_t i = 0; i < n_frames; ++i) {
        std::uint32_t len = r.u32();
        std::vector<std::uint8_t> frame;
        frame.reserve(len);
        for (std::uint32_t k = 0; k < len; ++k) frame.push_back(r.u8());
        out.field_frames.push_back(std::move(frame));
    }
    std::uint32_t n_sent = r.u32();
    for (std::uint32_t i = 0; i < n_sent; ++i) out.active_sentences.push_back(r.str());
    out.outcome.body = r.f64();
    out.outcome.wheels = r.f64();
    out.outcome.engine = r.f64();
    out.outcome.battery = r.f64();
    out.outcome.passenger_injury = r.f64();
    out.aggregate_before = r.f64();
    out.aggregate_after = r.f64();
    out.unavoidable = r.u8() != 0;
    return out;
}

inline std::vector<std::uint8_t> serialize(const ValidationRecord& r) {
    ByteWriter w;
    w.str(r.validator);
    w.str(r.record_id);
    w.u32(static_cast<std::uint32_t>(r.corrected_field.size()));
    w.raw(r.corrected_field);
    w.u32(static_cast<std::uint32_t>(r.alternate_manoeuvres.size()));
    for (const std::string& s : r.alternate_manoeuvres) w.str(s);
    w.u32(static_cast<std::uint32_t>(r.risk_overrides.size()));
    for (const auto& [key, value] : r.risk_overrides) {
        w.str(key.to_text());
        w.f64(value);
    }
    w.u8(r.approved ? 1 : 0);
    w.u8(r.exclude_from_training ? 1 : 0);
    return w.take();
}

inline ValidationRecord deserialize_validation(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    ValidationRecord out;
    out.validator = r.str();
    out.record_id = r.str();
    std::uint32_t n_field = r.u32();
    for (std::uint32_t i = 0; i < n_field; ++i) out.corrected_field.push_back(r.u8());
    std::uint32_t n_alt = r.u32();
    for (std::uint32_t i = 0; i < n_alt; ++i) out.alternate_manoeuvres.push_back(r.str());
    std::uint32_t n_over = r.u32();
    for (std::uint32_t i = 0; i < n_over; ++i) {
        std::string key_text = r.str();
        double value = r.f64();
        auto key = PatternKey::from_text(key_text);
        if (!key) throw LedgerError("validation record: bad pattern key '" + key_text + "'");
        out.risk_overrides.emplace_back(*key, value);
    }
    out.approved = r.u8() != 0;
    out.exclude_from_training = r.u8() != 0;
    return out;
}

// ---------------------------------------------------------------------------
// Blocks and chain

struct LedgerBlock {
    std::uint64_t index = 0;
    Digest prev_hash{};
    std::uint64_t timestamp = 0;   // logical (simulation tick), never wall-clock
    Digest payload_hash{};
    PayloadKind kind = PayloadKind::genesis;
    std::vector<std::uint8_t> payload;

    std::vector<std::uint8_t> header_bytes() const {
        ByteWriter w;
        w.u64(index);
        w.raw(prev_hash);
        w.u64(timestamp);
        w.raw(payload_hash);
        return w.take();
    }

    Digest header_digest() const { return sha256(header_bytes()); }
};

/// Append-only hash-chained ledger. A fresh ledger carries a genesis block
/// (index 0, all-zero prev_hash, empty payload); the first experience is
/// block 1.
class Ledger {
  public:
    Ledger() {
        LedgerBlock genesis;
        genesis.payload_hash = sha256(genesis.payload);
        blocks_.push_back(std::move(genesis));
    }

    static Ledger empty_no_genesis() {
        Ledger l;
        l.blocks_.clear();
        return l;
    }

    std::size_t size() const { return blocks_.size(); }
    const LedgerBlock& block(std::size_t i) const { return blocks_.at(i); }
    const std::vector<LedgerBlock>& blocks() const { return blocks_; }

    const LedgerBlock& append_incident(const IncidentRecord& rec, std::uint64_t timestamp) {
        validate_incident(rec);
        return push(PayloadKind::incident, serialize(rec), timestamp);
    }

    const LedgerBlock& append_validation(const ValidationRecord& rec, std::uint64_t timestamp) {
        auto incident = find_incident(rec.record_id);
        if (!incident)
            throw LedgerError("validation references unknown record_id '" + rec.record_id + "'");
        if (incident->unavoidable && !rec.exclude_from_training)
            throw LedgerError("unavoidable incident '" + rec.record_id +
                              "' requires exclude_from_training");
        for (const auto& [key, value] : rec.risk_overrides)
            if (value < 0.01 || value > 1.0)
                throw LedgerError("risk override outside [0.01,1] for key " + key.to_text());
        return push(PayloadKind::validation, serialize(rec), timestamp);
    }

    /// Recompute all digests; nullopt when intact, else the first bad index.
    /// The stored chain head covers the final block's header, which no
    /// prev_hash link protects.
    std::optional<std::size_t> verify_chain() const {
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const LedgerBlock& b = blocks_[i];
            if (b.index != i) return i;
            if (sha256(b.payload) != b.payload_hash) return i;
            if (i == 0) {
                if (b.prev_hash != Digest{}) return i;
            } else if (b.prev_hash != blocks_[i - 1].header_digest()) {
                return i;
            }
        }
        if (stored_head_ && *stored_head_ != blocks_.back().header_digest())
            return blocks_.size() - 1;
        return std::nullopt;
    }

    std::optional<IncidentRecord> find_incident(const std::string& record_id) const {
        for (const LedgerBlock& b : blocks_) {
            if (b.kind != PayloadKind::incident) continue;
            IncidentRecord rec = deserialize_incident(b.payload);
            if (rec.record_id == record_id) return rec;
        }
        return std::nullopt;
    }

    // -- persistence ---------------------------------------------------------

    void save(std::ostream& os) const {
        os.write("HLG1", 4);
        for (const LedgerBlock& b : blocks_) {
            ByteWriter w;
            w.u64(b.index);
            w.raw(b.prev_hash);
            w.u64(b.timestamp);
            w.raw(b.payload_hash);
            w.u8(static_cast<std::uint8_t>(b.kind));
            w.u32(static_cast<std::uint32_t>(b.payload.size()));
            w.raw(b.payload);
            ByteWriter framed;
            framed.u32(static_cast<std::uint32_t>(w.bytes().size()));
            framed.raw(w.bytes());
            os.write(reinterpret_cast<const char*>(framed.bytes().data()),
                     static_cast<std::streamsize>(framed.bytes().size()));
        }
        // chain head: protects the last block's header
        Digest head = blocks_.back().header_digest();
        os.write("HEAD", 4);
        os.write(reinterpret_cast<const char*>(head.data()),
                 static_cast<std::streamsize>(head.size()));
    }

    void save_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw LedgerError("cannot write ledger file: " + path);
        save(out);
    }

    static Ledger load(std::istream& is) {
        char magic[4];
        if (!is.read(magic, 4) || std::memcmp(magic, "HLG1", 4) != 0)
            throw LedgerError("not a ledger file");
        Ledger l = empty_no_genesis();
        while (true) {
            char mark[4];
            if (!is.read(mark, 4)) throw LedgerError("ledger file missing chain head");
            if (std::memcmp(mark, "HEAD", 4) == 0) {
                Digest head{};
                if (!is.read(reinterpret_cast<char*>(head.data()),
                             static_cast<std::streamsize>(head.size())))
                    throw LedgerError("truncated chain head");
                l.stored_head_ = head;
                break;
            }
            std::uint32_t len = 0;
            for (int i = 0; i < 4; ++i)
                len |= static_cast<std::uint32_t>(static_cast<unsigned char>(mark[i])) << (8 * i);
            std::vector<std::uint8_t> buf(len);
            if (len > 0 && !is.read(reinterpret_cast<char*>(buf.data()), len))
                throw LedgerError("truncated ledger block");
            ByteReader r(buf);
            LedgerBlock b;
            b.index = r.u64();
            b.prev_hash = r.arr<32>();
            b.timestamp = r.u64();
            b.payload_hash = r.arr<32>();
            b.kind = static_cast<PayloadKind>(r.u8());
            std::uint32_t plen = r.u32();
            if (plen != r.remaining()) throw LedgerError("ledger block length mismatch");
            b.payload = r.rest();
            l.blocks_.push_back(std::move(b));
        }
        if (l.blocks_.empty()) throw LedgerError("ledger file has no blocks");
        return l;
    }

    static Ledger load_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw LedgerError("cannot open ledger file: " + path);
        return load(in);
    }

  private:
    static void validate_incident(const IncidentRecord& rec) {
        if (rec.record_id.empty()) throw LedgerError("incident record_id missing");
        if (!rec.window.empty()) {
            double span = static_cast<double>(rec.window.back().tick - rec.window.front().tick) *
                          kTickSeconds;
            if (span < 10.0 - 1e-9 || span > 20.0 + 1e-9)
                throw LedgerError("incident window must span 10-20 s, got " +
                                  std::to_string(span));
        }
        if (rec.aggregate_after > rec.aggregate_before + 1e-12)
            throw LedgerError("incident aggregate drop must be >= 0");
    }

    const LedgerBlock& push(PayloadKind kind, std::vector<std::uint8_t> payload,
                            std::uint64_t timestamp) {
        LedgerBlock b;
        b.index = blocks_.size();
        b.prev_hash = blocks_.back().header_digest();
        b.timestamp = timestamp;
        b.payload_hash = sha256(payload);
        b.kind = kind;
        b.payload = std::move(payload);
        blocks_.push_back(std::move(b));
        stored_head_ = blocks_.back().header_digest();
        return blocks_.back();
    }

    std::vector<LedgerBlock> blocks_;
    std::optional<Digest> stored_head_;
};

// ---------------------------------------------------------------------------
// Relevance filtering

inline bool adjacent_profiles(EnvironmentProfile a, EnvironmentProfile b) {
    auto pair_is = [&](EnvironmentProfile x, EnvironmentProfile y) {
        return (a == x && b == y) || (a == y && b == x);
    };
    return pair_is(EnvironmentProfile::urban, EnvironmentProfile::suburban) ||
           pair_is(EnvironmentProfile::rural, EnvironmentProfile::highway);
}

struct RelevantRecord {
    ValidationRecord validation;
    EnvironmentProfile incident_profile = EnvironmentProfile::urban;
    int score = 0;
    std::size_t block_index = 0;
};

/// Approved, non-excluded validations scored by setting similarity and key
/// overlap with the car's own history; threshold >= 2, sorted descending.
inline std::vector<RelevantRecord> filter_relevant(const Ledger& ledger,
                                                   EnvironmentProfile car_profile,
                                                   const std::set<PatternKey>& car_history_keys,
                                                   int threshold = 2) {
    std::map<std::string, EnvironmentProfile> incident_profiles;
    std::map<std::string, bool> incident_unavoidable;
    std::vector<RelevantRecord> out;
    for (std::size_t i = 0; i < ledger.size(); ++i) {
        const LedgerBlock& b = ledger.block(i);
        if (b.kind == PayloadKind::incident) {
            IncidentRecord rec = deserialize_incident(b.payload);
            incident_profiles[rec.record_id] = rec.profile;
            incident_unavoidable[rec.record_id] = rec.unavoidable;
        } else if (b.kind == PayloadKind::validation) {
            ValidationRecord rec = deserialize_validation(b.payload);
            if (!rec.approved || rec.exclude_from_training) continue;
            auto it = incident_profiles.find(rec.record_id);
            if (it == incident_profiles.end()) continue;
            if (incident_unavoidable[rec.record_id]) continue;   // belt and braces
            int score = 0;
            if (it->second == car_profile)
                score += 2;
            else if (adjacent_profiles(it->second, car_profile))
                score += 1;
            bool key_overlap = false;
            for (const auto& [key, value] : rec.risk_overrides)
                if (car_history_keys.count(key)) key_overlap = true;
            if (key_overlap) score += 1;
            if (score >= threshold) out.push_back({std::move(rec), it->second, score, i});
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const RelevantRecord& a, const RelevantRecord& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.block_index < b.block_index;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Regression-gated integration

struct SuiteStats {
    bool ok = false;              // suite executed to completion
    std::string error;
    int incidents = 0;            // damaging collisions across the suite
    double calibration_mae = 0.0; // predicted-vs-realized over suite incidents
    std::vector<std::string> scenario_rows;   // per-scenario summary lines
};

struct GateReport {
    bool accepted = false;
    std::string reason;
    SuiteStats incumbent;
    SuiteStats candidate;
    std::size_t overrides_applied = 0;
    std::vector<std::string> warnings;
};

/// Apply validated overrides to a candidate table, prove it on the
/// maintenance suite, and adopt it only if incidents do not increase and
/// calibration error does not worsen beyond the configured limit.
template <typename SuiteFn>
std::pair<RiskTable, GateReport> integrate_with_regression_gate(
    const RiskTable& incumbent, const std::vector<RelevantRecord>& records, SuiteFn&& run_suite,
    double mae_worsen_limit = 0.02) {
    GateReport report;
    if (records.empty()) {
        report.accepted = true;
        report.reason = "no records to integrate";
        return {incumbent, report};
    }
    RiskTable candidate = incumbent;
    for (const RelevantRecord& r : records) {
        auto warnings = candidate.integrate_correction(r.validation.risk_overrides);
        report.warnings.insert(report.warnings.end(), warnings.begin(), warnings.end());
        report.overrides_applied += r.validation.risk_overrides.size();
    }
    report.incumbent = run_suite(incumbent);
    report.candidate = run_suite(candidate);
    if (!report.incumbent.ok || !report.candidate.ok) {
        report.accepted = false;
        report.reason = "suite execution failure: " +
                        (report.incumbent.ok ? report.candidate.error : report.incumbent.error);
        return {incumbent, report};
    }
    if (report.candidate.incidents > report.incumbent.incidents) {
        report.accepted = false;
        report.reason = "incidents increased (" + std::to_string(report.incumbent.incidents) +
                        " -> " + std::to_string(report.candidate.incidents) + ")";
        return {incumbent, report};
    }
    if (report.candidate.calibration_mae > report.incumbent.calibration_mae + mae_worsen_limit) {
        report.accepted = false;
        report.reason = "calibration MAE worsened beyond limit";
        return {incumbent, report};
    }
    report.accepted = true;
    report.reason = "gate passed";
    return {candidate, report};
}

// ---------------------------------------------------------------------------
// Validation record files (structured text, same family as scenarios)

inline ValidationRecord load_validation_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw LedgerError(std::string("validation parse error: ") + e.what());
    }
    if (j.value("schema", 0) != 1) throw LedgerError("validation schema: expected 1");
    ValidationRecord rec;
    rec.validator = j.value("validator", "");
    if (rec.validator.empty()) throw LedgerError("validation validator: missing");
    rec.record_id = j.value("record_id", "");
    if (rec.record_id.empty()) throw LedgerError("validation record_id: missing");
    if (j.contains("alternate_manoeuvres"))
        for (const auto& s : j.at("alternate_manoeuvres")) {
            std::string text_cmd = s.get<std::string>();
            lang::parse(text_cmd);   // must be valid car language
            rec.alternate_manoeuvres.push_back(text_cmd);
        }
    if (j.contains("risk_overrides"))
        for (const auto& [key_text, value] : j.at("risk_overrides").items()) {
            auto key = PatternKey::from_text(key_text);
            if (!key) throw LedgerError("risk_overrides: bad key '" + key_text + "'");
            rec.risk_overrides.emplace_back(*key, value.get<double>());
        }
    rec.approved = j.value("approved", false);
    rec.exclude_from_training = j.value("exclude_from_training", false);
    return rec;
}

inline ValidationRecord load_validation_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LedgerError("cannot open validation file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return load_validation_text(ss.str());
}

} // namespace homeo
