#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "homeodrive/bytes.hpp"
#include "homeodrive/config.hpp"
#include "homeodrive/geometry.hpp"
#include "homeodrive/risk_field.hpp"
#include "homeodrive/rng.hpp"

namespace homeo {

using MsgId = std::array<std::uint8_t, 16>;

inline std::string msg_id_hex(const MsgId& id) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(32);
    for (std::uint8_t b : id) {
        out += hex[b >> 4];
        out += hex[b & 0xf];
    }
    return out;
}

struct Pose {
    Vec2 position;
    double heading = 0.0;
    double speed = 0.0;   // m/s
};

struct Hazard {
    Vec2 world_position;
    double safety = 0.01;
    ObservableKind kind = ObservableKind::large_object;
    BandMask bands = kGroundBit | kCarBit;
};

/// V2V hazard share: pose, intended direction vector, and the significant
/// danger cells of the sender's heatmap converted to world coordinates.
struct HazardMessage {
    MsgId msg_id{};
    std::string sender;
    std::int64_t sent_tick = 0;
    Pose sender_pose;
    double intent_heading = 0.0;
    double intent_speed = 0.0;   // m/s
    std::vector<Hazard> hazards;
    std::uint8_t ttl_hops = 2;
};

/// Deterministic message id from sender identity and time.
inline MsgId make_msg_id(const std::string& sender, std::int64_t tick, std::uint64_t salt = 0) {
    MsgId id{};
    std::uint64_t a = fnv1a(sender) ^ static_cast<std::uint64_t>(tick) ^ (salt << 32);
    std::uint64_t b = a;
    std::uint64_t h1 = splitmix64(a);
    std::uint64_t h2 = splitmix64(b += h1);
    for (int i = 0; i < 8; ++i) id[i] = static_cast<std::uint8_t>((h1 >> (8 * i)) & 0xff);
    for (int i = 0; i < 8; ++i) id[8 + i] = static_cast<std::uint8_t>((h2 >> (8 * i)) & 0xff);
    return id;
}

struct Reputation {
    int rewards = 0;
    int penalties = 0;
    int score() const { return rewards - penalties; }
};

/// Collect the field's significant-danger cells (safety <= threshold) as
/// world-coordinate hazards, worst first, capped. Returns nothing when the
/// field is clean: penalties make noise expensive, so senders stay quiet.
inline std::optional<HazardMessage> broadcast(const std::string& sender, const Pose& pose,
                                              double intent_heading, double intent_speed,
                                              const RiskField& field, const MeshConfig& cfg,
                                              std::int64_t tick) {
    struct Cell {
        double safety;
        int band, shell, bin;
    };
    std::vector<Cell> cells;
    for (int b = 0; b < kBands; ++b)
        for (int shell = 0; shell < field.shells(); ++shell)
            for (int bin = 0; bin < field.bins(); ++bin) {
                double s = field.safety(static_cast<Band>(b), shell, bin);
                if (s <= cfg.hazard_threshold) cells.push_back({s, b, shell, bin});
            }
    if (cells.empty()) return std::nullopt;
    std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
        if (a.safety != b.safety) return a.safety < b.safety;
        if (a.band != b.band) return a.band < b.band;
        if (a.shell != b.shell) return a.shell < b.shell;
        return a.bin < b.bin;
    });
    if (static_cast<int>(cells.size()) > cfg.hazard_cap) cells.resize(cfg.hazard_cap);

    HazardMessage msg;
    msg.msg_id = make_msg_id(sender, tick);
    msg.sender = sender;
    msg.sent_tick = tick;
    msg.sender_pose = pose;
    msg.intent_heading = intent_heading;
    msg.intent_speed = intent_speed;
    msg.ttl_hops = static_cast<std::uint8_t>(cfg.ttl_hops);
    for (const Cell& c : cells) {
        Hazard h;
        double bearing = pose.heading + field.bin_center(c.bin);
        double dist = field.shell_center(c.shell);
        h.world_position = pose.position + unit(bearing) * dist;
        h.safety = c.safety;
        std::uint8_t tag = field.kind_tag(static_cast<Band>(c.band), c.shell, c.bin);
        h.kind = tag == kNoKind ? ObservableKind::large_object : static_cast<ObservableKind>(tag);
        h.bands = band_bit(static_cast<Band>(c.band));
        msg.hazards.push_back(h);
    }
    return msg;
}

/// Receiver-relative reinterpretation of a message: each hazard maps to a
/// field cell with trust-weighted value. Deltas only darken.
struct FieldDelta {
    struct Entry {
        Band band;
        int shell;   // -1 = outer aggregate
        int bin;
        double value;
        std::uint8_t kind;
    };
    std::vector<Entry> entries;
};

inline double trust_weight(int reputation_score, const MeshConfig& cfg) {
    return clamp01(0.5 + static_cast<double>(reputation_score) / (2.0 * cfg.reputation_saturation));
}

inline FieldDelta reinterpret(const HazardMessage& msg, const Pose& receiver,
                              const RiskField& geometry, int sender_reputation,
                              const MeshConfig& cfg, const FieldConfig& fcfg) {
    FieldDelta delta;
    double w = trust_weight(sender_reputation, cfg);
    for (const Hazard& h : msg.hazards) {
        Vec2 rel = h.world_position - receiver.position;
        double dist = rel.norm();
        double bearing = wrap_angle(rel.bearing() - receiver.heading);
        double value = 1.0 - w * (1.0 - h.safety);
        int shell = geometry.shell_of(dist);
        int bin = geometry.bin_of(bearing);
        for (int b = 0; b < kBands; ++b) {
            Band band = static_cast<Band>(b);
            if (!mask_has(h.bands, band)) continue;
            if (shell >= 0) {
                delta.entries.push_back(
                    {band, shell, bin, clamp_safety(value), static_cast<std::uint8_t>(h.kind)});
            } else {
                // a peer measured this hazard up close; distance to the
                // receiver does not dilute it, unlike own far-field sensing
                delta.entries.push_back(
                    {band, -1, 0, clamp_safety(value), static_cast<std::uint8_t>(h.kind)});
            }
        }
    }
    return delta;
}

inline void apply_delta(RiskField& field, const FieldDelta& delta) {
    for (const auto& e : delta.entries) {
        if (e.shell < 0)
            field.darken_outer(e.band, e.value);
        else
            field.darken(e.band, e.shell, e.bin, e.value, e.kind);
    }
}

// ---------------------------------------------------------------------------
// Wire format

inline std::vector<std::uint8_t> encode_message(const HazardMessage& msg) {
    ByteWriter body;
    body.raw(msg.msg_id);
    body.str(msg.sender);
    body.i64(msg.sent_tick);
    body.f64(msg.sender_pose.position.x);
    body.f64(msg.sender_pose.position.y);
    body.f64(msg.sender_pose.heading);
    body.f64(msg.sender_pose.speed);
    body.f64(msg.intent_heading);
    body.f64(msg.intent_speed);
    body.u8(msg.ttl_hops);
    body.u16(static_cast<std::uint16_t>(msg.hazards.size()));
    for (const Hazard& h : msg.hazards) {
        body.f64(h.world_position.x);
        body.f64(h.world_position.y);
        body.f64(h.safety);
        body.u8(static_cast<std::uint8_t>(h.kind));
        body.u8(h.bands);
    }
    ByteWriter out;
    out.u32(static_cast<std::uint32_t>(body.bytes().size()));
    out.raw(body.bytes());
    return out.take();
}

inline HazardMessage decode_message(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    std::uint32_t len = r.u32();
    if (len != r.remaining()) throw DecodeError("mesh wire: length prefix mismatch");
    HazardMessage msg;
    msg.msg_id = r.arr<16>();
    msg.sender = r.str();
    msg.sent_tick = r.i64();
    msg.sender_pose.position.x = r.f64();
    msg.sender_pose.position.y = r.f64();
    msg.sender_pose.heading = r.f64();
    msg.sender_pose.speed = r.f64();
    msg.intent_heading = r.f64();
    msg.intent_speed = r.f64();
    msg.ttl_hops = r.u8();
    std::uint16_t n = r.u16();
    for (int i = 0; i < n; ++i) {
        Hazard h;
        h.world_position.x = r.f64();
        h.world_position.y = r.f64();
        h.safety = r.f64();
        h.kind = static_cast<ObservableKind>(r.u8());
        h.bands = r.u8();
        msg.hazards.push_back(h);
    }
    if (!r.done()) throw DecodeError("mesh wire: trailing bytes");
    return msg;
}

/// Human-readable mirror of the wire encoding, field for field.
inline std::string debug_encode(const HazardMessage& msg) {
    char buf[160];
    std::string out = "msg_id=" + msg_id_hex(msg.msg_id) + " sender=" + msg.sender;
    std::snprintf(buf, sizeof buf,
                  " sent_tick=%lld pose=(%.6f,%.6f,%.6f,%.6f) intent=(%.6f,%.6f) ttl=%d hazards=%zu",
                  static_cast<long long>(msg.sent_tick), msg.sender_pose.position.x,
                  msg.sender_pose.position.y, msg.sender_pose.heading, msg.sender_pose.speed,
                  msg.intent_heading, msg.intent_speed, static_cast<int>(msg.ttl_hops),
                  msg.hazards.size());
    out += buf;
    for (const Hazard& h : msg.hazards) {
        std::snprintf(buf, sizeof buf, "\n  hazard pos=(%.6f,%.6f) safety=%.6f kind=%s bands=%s",
                      h.world_position.x, h.world_position.y, h.safety,
                      std::string(to_string(h.kind)).c_str(), mask_to_string(h.bands).c_str());
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Delivery simulation

struct Delivery {
    HazardMessage msg;
    std::string transmitter;   // last hop
    std::string receiver;
    std::int64_t tick = 0;
};

struct MeshLogRow {
    std::int64_t tick = 0;
    std::string sender;     // transmitter of this hop
    std::string receiver;
    MsgId msg_id{};
    std::string outcome;    // delivered | lost | reward | penalty | neutral
};

inline std::string mesh_log_csv_row(const MeshLogRow& row) {
    return std::to_string(row.tick) + "," + row.sender + "," + row.receiver + "," +
           msg_id_hex(row.msg_id) + "," + row.outcome;
}

/// Tick-synchronized local mesh: messages sent at tick t are deliverable to
/// peers in range from t + latency; seeded per-hop loss; ttl-limited relays;
/// receivers see each msg_id at most once.
class MeshNetwork {
  public:
    MeshNetwork() : rng_(0) {}
    MeshNetwork(const MeshConfig& cfg, std::uint64_t master_seed)
        : cfg_(cfg), rng_(child_seed(master_seed, "mesh")) {}

    void send(const HazardMessage& msg, Vec2 transmitter_pos, const std::string& transmitter,
              std::int64_t now_tick) {
        Flight f;
        f.msg = msg;
        f.transmitter = transmitter;
        f.from = transmitter_pos;
        f.deliver_tick = now_tick + cfg_.latency_ticks;
        f.remaining_ttl = msg.ttl_hops;
        in_flight_.push_back(std::move(f));
    }

    /// Advance to `tick`; peers must be passed in a stable (sorted) order.
    std::vector<Delivery> step(std::int64_t tick,
                               const std::vector<std::pair<std::string, Vec2>>& peers) {
        std::vector<Delivery> inboxes;
        std::vector<Flight> keep;
        std::vector<Flight> relays;
        for (Flight& f : in_flight_) {
            if (f.deliver_tick != tick) {
                keep.push_back(std::move(f));
                continue;
            }
            for (const auto& [peer, pos] : peers) {
                if (peer == f.transmitter || peer == f.msg.sender) continue;
                if ((pos - f.from).norm() > cfg_.range_m) continue;
                bool lost = rng_.next_double() < cfg_.loss_probability;
                if (lost) {
                    log_.push_back({tick, f.transmitter, peer, f.msg.msg_id, "lost"});
                    continue;
                }
                if (!seen_[peer].insert(f.msg.msg_id).second) continue;   // duplicate
                log_.push_back({tick, f.transmitter, peer, f.msg.msg_id, "delivered"});
                inboxes.push_back({f.msg, f.transmitter, peer, tick});
                if (f.remaining_ttl > 1) {
                    Flight relay;
                    relay.msg = f.msg;
                    relay.msg.ttl_hops = static_cast<std::uint8_t>(f.remaining_ttl - 1);
                    relay.transmitter = peer;
                    relay.from = pos;
                    relay.deliver_tick = tick + cfg_.latency_ticks;
                    relay.remaining_ttl = f.remaining_ttl - 1;
                    relays.push_back(std::move(relay));
                }
            }
        }
        in_flight_ = std::move(keep);
        for (Flight& r : relays) in_flight_.push_back(std::move(r));
        return inboxes;
    }

    const std::vector<MeshLogRow>& log() const { return log_; }
    std::vector<MeshLogRow>& log() { return log_; }

  private:
    struct Flight {
        HazardMessage msg;
        std::string transmitter;
        Vec2 from;
        std::int64_t deliver_tick = 0;
        int remaining_ttl = 0;
    };

    MeshConfig cfg_;
    Rng rng_;
    std::vector<Flight> in_flight_;
    std::map<std::string, std::set<MsgId>> seen_;
    std::vector<MeshLogRow> log_;
};

// ---------------------------------------------------------------------------
// Usefulness scoring

/// A delivered message awaiting judgement: novel hazards must be confirmed
/// by the receiver's own sensing within the horizon.
struct PendingScore {
    MsgId msg_id{};
    std::string sender;
    std::string receiver;
    std::int64_t delivered_tick = 0;
    std::vector<Hazard> novel_hazards;   // hazards the receiver's field didn't know
    bool any_hazard = false;
    bool confirmed = false;
};

/// Novelty check at delivery: which hazards landed on cells the receiver's
/// own field still considered safe.
inline PendingScore start_scoring(const HazardMessage& msg, const std::string& receiver,
                                  const Pose& receiver_pose, const RiskField& own_field,
                                  std::int64_t tick, const MeshConfig& cfg) {
    PendingScore p;
    p.msg_id = msg.msg_id;
    p.sender = msg.sender;
    p.receiver = receiver;
    p.delivered_tick = tick;
    p.any_hazard = !msg.hazards.empty();
    for (const Hazard& h : msg.hazards) {
        Vec2 rel = h.world_position - receiver_pose.position;
        double dist = rel.norm();
        double bearing = wrap_angle(rel.bearing() - receiver_pose.heading);
        int shell = own_field.shell_of(dist);
        double own = 1.0;
        for (int b = 0; b < kBands; ++b) {
            Band band = static_cast<Band>(b);
            if (!mask_has(h.bands, band)) continue;
            own = shell >= 0 ? std::min(own, own_field.safety(band, shell, own_field.bin_of(bearing)))
                             : std::min(own, own_field.outer(band).safety);
        }
        if (own > cfg.novelty_threshold) p.novel_hazards.push_back(h);
    }
    return p;
}

/// Per-tick confirmation probe against the receiver's own-sensed field.
inline void update_confirmation(PendingScore& p, const Pose& receiver_pose,
                                const RiskField& own_field, const MeshConfig& cfg) {
    if (p.confirmed) return;
    for (const Hazard& h : p.novel_hazards) {
        Vec2 rel = h.world_position - receiver_pose.position;
        int shell = own_field.shell_of(rel.norm());
        if (shell < 0) continue;
        int bin = own_field.bin_of(wrap_angle(rel.bearing() - receiver_pose.heading));
        for (int b = 0; b < kBands; ++b) {
            Band band = static_cast<Band>(b);
            if (!mask_has(h.bands, band)) continue;
            if (own_field.safety(band, shell, bin) <= cfg.confirm_threshold) {
                p.confirmed = true;
                return;
            }
        }
    }
}

enum class ScoreOutcome { reward, penalty, neutral };

/// Final judgement once the horizon has elapsed since delivery.
inline ScoreOutcome score_message(const PendingScore& p) {
    if (p.novel_hazards.empty()) return ScoreOutcome::neutral;
    return p.confirmed ? ScoreOutcome::reward : ScoreOutcome::penalty;
}

} // namespace homeo
