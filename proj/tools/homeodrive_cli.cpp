// homeodrive CLI: run scenarios and fleets, calibrate risk tables by
// deliberate crashing, manage the experience ledger, render field dumps.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "homeodrive/ledger.hpp"
#include "homeodrive/render.hpp"
#include "homeodrive/runner.hpp"
#include "homeodrive/scenario_io.hpp"

namespace fs = std::filesystem;
using namespace homeo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInvariant = 2;

struct CommonFlags {
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string config_path;
    bool pretty = false;
};

SimConfig base_config(const CommonFlags& flags) {
    SimConfig cfg;
    if (!flags.config_path.empty()) cfg = load_config_file(flags.config_path, cfg);
    return cfg;
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

void print_report(const RunReport& report, bool pretty) {
    if (!pretty) {
        std::cout << report_to_json(report).dump(2) << "\n";
        return;
    }
    std::cout << "scenario " << report.scenario_id << "  seed " << report.seed << "  ticks "
              << report.ticks << "\n";
    std::cout << "incidents " << report.incidents << "  collisions " << report.collisions_total
              << "  caution ticks " << report.caution_ticks << "\n";
    for (const EgoReport& e : report.egos) {
        std::cout << "  " << e.id << ": aggregate " << e.final_aggregate << ", "
                  << (e.destination_reached ? "arrived at " + std::to_string(e.trip_time) + " s"
                                            : std::string(e.disabled ? "disabled" : "en route"))
                  << ", energy " << e.energy_consumed << ", credits " << e.homeostasis.credits
                  << "\n";
    }
}

int finish_run(const RunResult& result, const std::string& out_dir, bool dump_fields,
               bool self_check, bool pretty, const std::string& mesh_csv = "") {
    fs::path out(out_dir);
    write_file(out / "trace.csv", result.trace_csv);
    write_file(out / "events.csv", result.event_csv);
    if (!mesh_csv.empty()) write_file(out / "mesh.csv", mesh_csv);
    if (dump_fields)
        for (const auto& [ego, bytes] : result.field_dumps)
            write_file(out / ("fields_" + ego + ".bin"), bytes);
    print_report(result.report, pretty);
    if (self_check && !result.violations.empty()) {
        for (const AuditViolation& v : result.violations)
            std::cerr << "violation tick " << v.tick << " ego " << v.ego << " [" << v.rule
                      << "] " << v.detail << "\n";
        return kExitInvariant;
    }
    return kExitOk;
}

std::vector<LoadedScenario> load_suite(const std::string& dir, const SimConfig& base) {
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".json") paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw std::runtime_error("no scenarios in suite directory " + dir);
    std::vector<LoadedScenario> suite;
    for (const fs::path& p : paths) suite.push_back(load_scenario_file(p.string(), base));
    return suite;
}

RiskTable load_table_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open risk table " + path);
    return RiskTable::load(in);
}

void save_table_file(const RiskTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write risk table " + path);
    table.save(out);
}

nlohmann::ordered_json calibration_report_json(const CalibrationReport& report) {
    nlohmann::ordered_json j;
    j["n_crashes"] = report.n_crashes;
    j["n_scenarios_without_collision"] = report.n_scenarios_without_collision;
    j["mae"] = report.mae;
    j["worst_key"] = report.worst_key ? report.worst_key->to_text() : "";
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& row : report.rows) {
        nlohmann::ordered_json r;
        r["key"] = row.key.to_text();
        r["predicted_damage"] = row.predicted_damage;
        r["mean_realized"] = row.mean_realized;
        r["n_heldout"] = row.n_heldout;
        r["trained"] = row.trained;
        rows.push_back(r);
    }
    j["rows"] = rows;
    return j;
}

int cmd_run(const std::string& scenario_path, const CommonFlags& flags, const std::string& out_dir,
            bool dump_fields, bool self_check, const std::string& table_path) {
    LoadedScenario loaded = load_scenario_file(scenario_path, base_config(flags));
    RunOptions opts;
    if (flags.seed_set) opts.seed = flags.seed;
    opts.self_check = self_check;
    opts.dump_fields = dump_fields;
    if (!table_path.empty()) opts.table = load_table_file(table_path);
    RunResult result = run_scenario(loaded, opts);
    return finish_run(result, out_dir, dump_fields, self_check, flags.pretty);
}

int cmd_fleet(const std::string& scenario_path, const CommonFlags& flags,
              const std::string& out_dir, bool dump_fields, bool self_check,
              const std::string& ledger_path, const std::string& table_path) {
    LoadedScenario loaded = load_scenario_file(scenario_path, base_config(flags));
    RunOptions opts;
    if (flags.seed_set) opts.seed = flags.seed;
    opts.self_check = self_check;
    opts.dump_fields = dump_fields;
    opts.mesh_enabled = true;
    if (!table_path.empty()) opts.table = load_table_file(table_path);
    RunResult result = run_scenario(loaded, opts);
    if (!ledger_path.empty()) {
        Ledger ledger = fs::exists(ledger_path) ? Ledger::load_file(ledger_path) : Ledger();
        for (const IncidentRecord& rec : result.incidents)
            ledger.append_incident(rec, static_cast<std::uint64_t>(rec.window.back().tick));
        ledger.save_file(ledger_path);
        std::cerr << "ledger: " << result.incidents.size() << " incident(s) appended to "
                  << ledger_path << "\n";
    }
    return finish_run(result, out_dir, dump_fields, self_check, flags.pretty, result.mesh_csv);
}

int cmd_calibrate(const std::string& suite_dir, const CommonFlags& flags,
                  const std::string& table_in, const std::string& table_out) {
    SimConfig base = base_config(flags);
    std::vector<LoadedScenario> suite = load_suite(suite_dir, base);
    RiskTable table = table_in.empty() ? RiskTable::untrained() : load_table_file(table_in);
    std::uint64_t seed = flags.seed_set ? flags.seed : 0;

    std::map<std::string, const LoadedScenario*> by_id;
    std::vector<std::string> ids;
    for (const LoadedScenario& ls : suite) {
        by_id[ls.scenario.id] = &ls;
        ids.push_back(ls.scenario.id);
    }
    auto crash_fn = [&](const std::string& id) {
        return run_crash_scenario(*by_id.at(id), table, seed);
    };
    auto [trained, report] = run_calibration_campaign(ids, table, crash_fn);
    if (!table_out.empty()) save_table_file(trained, table_out);
    std::cout << calibration_report_json(report).dump(2) << "\n";
    return kExitOk;
}

int cmd_ledger_dump(const std::string& path) {
    Ledger ledger = Ledger::load_file(path);
    for (std::size_t i = 0; i < ledger.size(); ++i) {
        const LedgerBlock& b = ledger.block(i);
        std::cout << "block " << b.index << " kind="
                  << (b.kind == PayloadKind::genesis
                          ? "genesis"
                          : (b.kind == PayloadKind::incident ? "incident" : "validation"))
                  << " timestamp=" << b.timestamp << " prev=" << digest_hex(b.prev_hash).substr(0, 16)
                  << " payload=" << digest_hex(b.payload_hash).substr(0, 16) << " bytes="
                  << b.payload.size() << "\n";
        if (b.kind == PayloadKind::incident) {
            IncidentRecord rec = deserialize_incident(b.payload);
            std::cout << "  record " << rec.record_id << " car=" << rec.car_id << " profile="
                      << to_string(rec.profile) << " window=" << rec.window.size()
                      << " frames=" << rec.field_frames.size() << " drop="
                      << rec.aggregate_before - rec.aggregate_after
                      << (rec.unavoidable ? " UNAVOIDABLE" : "") << "\n";
        } else if (b.kind == PayloadKind::validation) {
            ValidationRecord rec = deserialize_validation(b.payload);
            std::cout << "  validation of " << rec.record_id << " by " << rec.validator
                      << " approved=" << rec.approved
                      << " exclude=" << rec.exclude_from_training << " overrides=";
            for (const auto& [key, value] : rec.risk_overrides)
                std::cout << key.to_text() << "->" << value << " ";
            std::cout << "\n";
        }
    }
    return kExitOk;
}

int cmd_ledger_verify(const std::string& path) {
    Ledger ledger = Ledger::load_file(path);
    auto bad = ledger.verify_chain();
    if (!bad) {
        std::cout << "ok " << ledger.size() << " blocks\n";
        return kExitOk;
    }
    std::cout << "first_bad_index " << *bad << "\n";
    return kExitInvariant;
}

int cmd_ledger_validate(const std::string& ledger_path, const std::string& validation_path) {
    Ledger ledger = Ledger::load_file(ledger_path);
    ValidationRecord rec = load_validation_file(validation_path);
    ledger.append_validation(rec, 0);
    ledger.save_file(ledger_path);
    std::cout << "appended validation of " << rec.record_id << "; chain length " << ledger.size()
              << "\n";
    return kExitOk;
}

int cmd_ledger_integrate(const std::string& ledger_path, const CommonFlags& flags,
                         const std::string& table_in, const std::string& table_out,
                         const std::string& suite_dir, const std::string& profile_name) {
    Ledger ledger = Ledger::load_file(ledger_path);
    SimConfig base = base_config(flags);
    RiskTable incumbent = table_in.empty() ? RiskTable::seeded() : load_table_file(table_in);
    auto profile = profile_from_string(profile_name);
    if (!profile) throw std::runtime_error("unknown profile " + profile_name);

    std::set<PatternKey> history;
    for (const auto& [key, entry] : incumbent.entries())
        if (entry.count > 0) history.insert(key);

    auto relevant = filter_relevant(ledger, *profile, history, base.ledger.relevance_threshold);
    std::vector<LoadedScenario> suite = load_suite(suite_dir, base);
    std::uint64_t seed = flags.seed_set ? flags.seed : 0;
    auto [table, report] = integrate_with_regression_gate(
        incumbent, relevant, make_suite_runner(suite, seed), base.ledger.mae_worsen_limit);

    nlohmann::ordered_json j;
    j["records_considered"] = relevant.size();
    j["overrides_applied"] = report.overrides_applied;
    j["accepted"] = report.accepted;
    j["reason"] = report.reason;
    j["incumbent_incidents"] = report.incumbent.incidents;
    j["candidate_incidents"] = report.candidate.incidents;
    j["incumbent_mae"] = report.incumbent.calibration_mae;
    j["candidate_mae"] = report.candidate.calibration_mae;
    j["warnings"] = report.warnings;
    std::cout << j.dump(2) << "\n";
    if (!table_out.empty()) save_table_file(table, table_out);
    return kExitOk;
}

int cmd_render(const std::string& dump_path, const std::string& out_dir, int px_per_m) {
    std::ifstream in(dump_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open field dump " + dump_path);
    fs::create_directories(out_dir);
    field_io::Frame frame;
    int n = 0;
    while (field_io::read_frame(in, frame)) {
        char name[64];
        std::snprintf(name, sizeof name, "frame_%06lld.ppm", static_cast<long long>(frame.tick));
        std::ofstream img(fs::path(out_dir) / name, std::ios::binary);
        render_frame_ppm(img, frame, px_per_m);
        ++n;
    }
    std::cerr << "rendered " << n << " frame(s) to " << out_dir << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"homeodrive: homeostatic self-driving simulator suite"};
    app.require_subcommand(1);

    CommonFlags flags;
    app.add_option("--seed", flags.seed, "master seed (overrides scenario seed)")
        ->each([&](const std::string&) { flags.seed_set = true; });
    app.add_option("--config", flags.config_path, "config overrides file (JSON)");
    app.add_flag("--pretty", flags.pretty, "human-readable report");

    // run
    std::string scenario_path, out_dir = "out", table_path;
    bool dump_fields = false, self_check = false;
    auto* run = app.add_subcommand("run", "simulate one scenario");
    run->add_option("scenario", scenario_path, "scenario file")->required();
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--table", table_path, "initial risk table file");
    run->add_flag("--dump-fields", dump_fields, "write per-tick binary field dumps");
    run->add_flag("--self-check", self_check, "run per-tick invariant audits");

    // calibrate
    std::string suite_dir, table_in, table_out;
    auto* calibrate = app.add_subcommand("calibrate", "crash-calibration campaign");
    calibrate->add_option("suite", suite_dir, "directory of crash scenarios")->required();
    calibrate->add_option("--table-in", table_in, "input table (default: untrained)");
    calibrate->add_option("--table-out", table_out, "output table path");

    // fleet
    std::string ledger_path;
    auto* fleet = app.add_subcommand("fleet", "multi-ego run with the V2V mesh");
    fleet->add_option("scenario", scenario_path, "scenario file")->required();
    fleet->add_option("--out", out_dir, "output directory");
    fleet->add_option("--ledger", ledger_path, "experience ledger file (incidents appended)");
    fleet->add_option("--table", table_path, "initial risk table file");
    fleet->add_flag("--dump-fields", dump_fields, "write per-tick binary field dumps");
    fleet->add_flag("--self-check", self_check, "run per-tick invariant audits");

    // ledger
    auto* ledger = app.add_subcommand("ledger", "experience ledger workflows");
    ledger->require_subcommand(1);
    std::string ledger_file, validation_file, profile_name = "urban";
    auto* ldump = ledger->add_subcommand("dump", "textual view of a ledger file");
    ldump->add_option("file", ledger_file)->required();
    auto* lverify = ledger->add_subcommand("verify", "verify the hash chain");
    lverify->add_option("file", ledger_file)->required();
    auto* lvalidate = ledger->add_subcommand("validate", "append a validation record");
    lvalidate->add_option("file", ledger_file)->required();
    lvalidate->add_option("validation", validation_file, "validation record (JSON)")->required();
    auto* lintegrate =
        ledger->add_subcommand("integrate", "integrate validated records through the gate");
    lintegrate->add_option("file", ledger_file)->required();
    lintegrate->add_option("--table-in", table_in, "incumbent table (default: seeded)");
    lintegrate->add_option("--table-out", table_out, "accepted table output");
    lintegrate->add_option("--suite", suite_dir, "maintenance suite directory")->required();
    lintegrate->add_option("--profile", profile_name, "car environment profile");

    // render
    std::string dump_path, render_out = "frames";
    int px_per_m = 16;
    auto* render = app.add_subcommand("render", "render field dumps to PPM images");
    render->add_option("dump", dump_path, "binary field dump")->required();
    render->add_option("out", render_out, "output directory");
    render->add_option("--px-per-m", px_per_m, "pixels per meter");

    CLI11_PARSE(app, argc, argv);

    auto started = std::chrono::steady_clock::now();
    int code = kExitUsage;
    try {
        if (run->parsed())
            code = cmd_run(scenario_path, flags, out_dir, dump_fields, self_check, table_path);
        else if (calibrate->parsed())
            code = cmd_calibrate(suite_dir, flags, table_in, table_out);
        else if (fleet->parsed())
            code = cmd_fleet(scenario_path, flags, out_dir, dump_fields, self_check, ledger_path,
                             table_path);
        else if (ledger->parsed()) {
            if (ldump->parsed()) code = cmd_ledger_dump(ledger_file);
            else if (lverify->parsed()) code = cmd_ledger_verify(ledger_file);
            else if (lvalidate->parsed()) code = cmd_ledger_validate(ledger_file, validation_file);
            else if (lintegrate->parsed())
                code = cmd_ledger_integrate(ledger_file, flags, table_in, table_out, suite_dir,
                                            profile_name);
        } else if (render->parsed()) {
            code = cmd_render(dump_path, render_out, px_per_m);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - started)
                       .count();
    std::cerr << "wall_clock_ms " << elapsed << "\n";
    return code;
}
