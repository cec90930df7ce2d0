#include "knotforge/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>

#include "knotforge/error.hpp"
#include "knotforge/io.hpp"
#include "knotforge/kernels.hpp"

namespace knotforge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kDriveCounter = 0x4452560000000000ULL;

const char* kModeNames[] = {"rollout", "baseline", "iou", "contribution", "bench"};

std::int64_t default_ref_start(Mode mode, const sched::RolloutConfig& r) {
    if (mode == Mode::Baseline) return static_cast<std::int64_t>(r.frames);
    return static_cast<std::int64_t>(r.c + r.k + 1);
}

void validate(const RunSpec& spec) {
    spec.model.validate();
    if (spec.mode == Mode::Iou || spec.mode == Mode::Contribution) {
        if (spec.mask_design != "all") topology::parse_variant(spec.mask_design);
        topology::MaskDesign d{topology::Variant::KnotForcing, spec.rollout.c, spec.rollout.L,
                               spec.rollout.k, spec.rollout.c};
        d.validate();
    }
    if (spec.mode == Mode::Baseline) {
        sched::RolloutConfig r = spec.rollout;
        r.k = 0;
        r.running_ahead = false;
        r.validate();
    } else if (spec.mode != Mode::Iou) {
        spec.rollout.validate();
    }
    if (spec.mode == Mode::Contribution) {
        if (spec.anchor < 0 || spec.contribution_seeds == 0) {
            throw ConfigError("contribution needs anchor >= 0 and at least one seed");
        }
    }
    if (spec.mode == Mode::Bench && spec.bench_repeats == 0) {
        throw ConfigError("bench_repeats must be positive");
    }
}

json read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
        json j = json::parse(in);
        if (!j.is_object()) throw ConfigError("config file " + path + " is not a JSON object");
        return j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
}

model::ToyDiT make_model(const RunSpec& spec) {
    if (!spec.load_weights.empty()) return io::load_weights(spec.load_weights);
    return model::ToyDiT(spec.model);
}

std::optional<model::DrivingSignal> make_drive(const RunSpec& spec, const model::ModelConfig& mc,
                                               std::size_t frames) {
    if (!spec.drive) return std::nullopt;
    return synth_driving(frames, mc.d_drive, spec.rollout.seed, spec.zero_drive);
}

std::ofstream open_csv(const fs::path& path, const std::string& hash, const std::string& header) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "# config_hash=" << hash << '\n' << header << '\n';
    return out;
}

json header_line(const RunSpec& spec) {
    return {{"config_hash", config_hash(spec)}, {"config", to_json(spec)}};
}

int run_rollout(const RunSpec& spec, std::ostream& log) {
    const auto model = make_model(spec);
    sched::RolloutConfig r = spec.rollout;
    const bool baseline = spec.mode == Mode::Baseline;
    if (baseline) {
        r.k = 0;
        r.running_ahead = false;
    }
    const auto drive = make_drive(spec, model.config(), r.frames + r.k);
    const auto* d = drive ? &*drive : nullptr;
    const auto out = baseline ? sched::generate_baseline(r, model, d)
                              : sched::generate_stream(r, model, d);

    const fs::path dir = spec.output_dir;
    const json header = header_line(spec);
    io::write_frames(dir / "frames", out.frames, header);
    sched::write_trace_jsonl(dir / "trace.jsonl", out.trace, header);
    sched::write_cache_trace_jsonl(dir / "cache_trace.jsonl", out.trace, header);
    if (spec.save_weights) io::save_weights(model, dir / "weights");

    std::size_t recaches = 0;
    for (const auto& c : out.trace.chunks) recaches += c.recache ? 1 : 0;
    log << to_string(spec.mode) << ": " << out.frames.size() << " frames, "
        << out.trace.chunks.size() << " chunks, " << recaches << " recaches -> "
        << dir.string() << '\n';
    return 0;
}

int run_iou(const RunSpec& spec, std::ostream& log) {
    std::vector<topology::Variant> variants;
    if (spec.mask_design == "all") {
        variants = {topology::Variant::GrowingCache, topology::Variant::SinkWindow,
                    topology::Variant::KnotForcing};
    } else {
        variants = {topology::parse_variant(spec.mask_design)};
    }
    const std::string hash = config_hash(spec);
    const std::size_t n = spec.rollout.frames;
    for (auto v : variants) {
        topology::MaskDesign d{v, spec.rollout.c, spec.rollout.L, spec.rollout.k, spec.rollout.c};
        const auto mask = topology::build_mask(d, n);
        const std::string name(topology::to_string(v));
        auto out = open_csv(fs::path(spec.output_dir) / ("iou_" + name + ".csv"), hash,
                            "design,t,iou");
        char buf[64];
        for (std::size_t t = 0; t + 1 < n; ++t) {
            std::snprintf(buf, sizeof buf, "%.9g", topology::context_iou(mask, t));
            out << name << ',' << t << ',' << buf << '\n';
        }
        log << "iou: " << name << " " << (n - 1) << " rows\n";
    }
    return 0;
}

int run_contribution(const RunSpec& spec, std::ostream& log) {
    const auto sweep = contribution_sweep(spec);
    const std::string hash = config_hash(spec);
    const fs::path dir = spec.output_dir;
    const auto mean = sweep.mean();
    char buf[64];
    {
        auto out = open_csv(dir / "contribution.csv", hash, "anchor,frame,score");
        for (std::size_t f = 0; f < sweep.frames.size(); ++f) {
            std::snprintf(buf, sizeof buf, "%.9g", mean[f]);
            out << sweep.anchor << ',' << sweep.frames[f] << ',' << buf << '\n';
        }
    }
    auto out = open_csv(dir / "contribution_per_seed.csv", hash, "seed,anchor,frame,score");
    for (std::size_t s = 0; s < sweep.scores.size(); ++s) {
        for (std::size_t f = 0; f < sweep.frames.size(); ++f) {
            std::snprintf(buf, sizeof buf, "%.9g", sweep.scores[s][f]);
            out << spec.rollout.seed + s << ',' << sweep.anchor << ',' << sweep.frames[f] << ','
                << buf << '\n';
        }
    }
    log << "contribution: anchor " << sweep.anchor << ", " << sweep.scores.size() << " seeds\n";
    return 0;
}

struct Stats {
    double mean = 0, stddev = 0, cv = 0, p50 = 0, p95 = 0, min = 0, max = 0;
};

Stats summarize(std::vector<double> v) {
    Stats s;
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    double sum = 0;
    for (double x : v) sum += x;
    s.mean = sum / v.size();
    double var = 0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(var / v.size());
    s.cv = s.mean > 0 ? s.stddev / s.mean : 0;
    s.p50 = v[v.size() / 2];
    s.p95 = v[std::min(v.size() - 1, static_cast<std::size_t>(0.95 * v.size()))];
    s.min = v.front();
    s.max = v.back();
    return s;
}

int run_bench(const RunSpec& spec, std::ostream& log) {
    const auto model = make_model(spec);
    const auto& r = spec.rollout;
    const auto drive = make_drive(spec, model.config(), r.frames + r.k);
    const auto* d = drive ? &*drive : nullptr;

    std::vector<double> steady;
    double total_s = 0;
    std::size_t total_frames = 0;
    std::vector<sched::ChunkRecord> last;
    bool counts_match = true;
    for (std::size_t rep = 0; rep < spec.bench_repeats + 1; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        auto out = sched::generate_stream(r, model, d);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (rep == 0) continue;  // warm-up pass
        total_s += secs;
        total_frames += out.frames.size();
        for (const auto& c : out.trace.chunks) {
            if (c.start < static_cast<std::int64_t>(r.L)) continue;
            steady.push_back(c.t_wall_ms);
            const auto expect =
                sched::expected_score_elements(r, model.config(), static_cast<std::size_t>(c.start));
            counts_match = counts_match && c.score_elements == expect;
        }
        last = std::move(out.trace.chunks);
    }
    const Stats s = summarize(steady);
    const double fps = total_s > 0 ? total_frames / total_s : 0;

    json j = header_line(spec);
    j["threads"] = kernels::max_threads();
    j["repeats"] = spec.bench_repeats;
    j["chunk_ms"] = {{"samples", steady.size()}, {"mean", s.mean}, {"stddev", s.stddev},
                     {"cv", s.cv},   {"p50", s.p50},       {"p95", s.p95},
                     {"min", s.min}, {"max", s.max}};
    j["fps"] = fps;
    j["score_elements_per_chunk"] =
        last.empty() ? 0 : sched::expected_score_elements(r, model.config(), r.L);
    j["score_elements_match"] = counts_match;
    const fs::path dir = spec.output_dir;
    std::ofstream(dir / "bench.json") << j.dump(2) << '\n';
    {
        auto out = open_csv(dir / "bench_chunks.csv", config_hash(spec),
                            "chunk,start,t_wall_ms,score_elements,recache_score_elements");
        for (const auto& c : last) {
            out << c.chunk << ',' << c.start << ',' << c.t_wall_ms << ',' << c.score_elements
                << ',' << c.recache_score_elements << '\n';
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "bench: %zu chunks, mean %.3f ms, cv %.3f, p95 %.3f ms, %.1f fps, threads %d\n",
                  steady.size(), s.mean, s.cv, s.p95, fps, kernels::max_threads());
    log << buf;
    return 0;
}

}  // namespace

std::string to_string(Mode m) { return kModeNames[static_cast<int>(m)]; }

Mode parse_mode(const std::string& name) {
    for (int i = 0; i < 5; ++i) {
        if (name == kModeNames[i]) return static_cast<Mode>(i);
    }
    throw ConfigError("unknown mode '" + name + "'");
}

json to_json(const RunSpec& spec) {
    json j = sched::to_json(spec.rollout);
    j.update(io::to_json(spec.model));
    j["mode"] = to_string(spec.mode);
    j["out"] = spec.output_dir;
    j["mask_design"] = spec.mask_design;
    j["drive"] = spec.drive;
    j["zero_drive"] = spec.zero_drive;
    j["anchor"] = spec.anchor;
    j["contribution_seeds"] = spec.contribution_seeds;
    j["load_weights"] = spec.load_weights;
    j["save_weights"] = spec.save_weights;
    j["bench_repeats"] = spec.bench_repeats;
    return j;
}

RunSpec run_spec_from_json(const json& j) {
    RunSpec spec;
    try {
        spec.rollout = sched::rollout_config_from_json(j);
        spec.model = io::model_config_from_json(j);
        spec.mode = parse_mode(j.value("mode", to_string(spec.mode)));
        spec.output_dir = j.value("out", spec.output_dir);
        spec.mask_design = j.value("mask_design", spec.mask_design);
        spec.drive = j.value("drive", spec.drive);
        spec.zero_drive = j.value("zero_drive", spec.zero_drive);
        spec.anchor = j.value("anchor", spec.anchor);
        spec.contribution_seeds = j.value("contribution_seeds", spec.contribution_seeds);
        spec.load_weights = j.value("load_weights", spec.load_weights);
        spec.save_weights = j.value("save_weights", spec.save_weights);
        spec.bench_repeats = j.value("bench_repeats", spec.bench_repeats);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return spec;
}

std::string config_hash(const RunSpec& spec) {
    const std::string text = to_json(spec).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunSpec parse_args(const std::vector<std::string>& args, std::optional<std::string>* dump_path) {
    CLI::App app{"knotforge streaming diffusion engine"};
    std::optional<std::string> mode, config, out, mask_design, dump, load;
    std::optional<std::size_t> frames, c, L, k, s, seeds, repeats;
    std::optional<std::int64_t> n0, anchor;
    std::optional<std::uint64_t> seed, model_seed;
    bool no_drive = false, zero_drive = false, no_ahead = false, fast = false, save = false;

    app.add_option("--mode", mode, "rollout | baseline | iou | contribution | bench");
    app.add_option("--config", config, "JSON config file");
    app.add_option("--frames", frames, "frames to generate");
    app.add_option("--chunk,--c", c, "chunk size");
    app.add_option("--window,--L", L, "window length");
    app.add_option("--knot,--k", k, "knot length");
    app.add_option("--ahead-interleave,--s", s, "running-ahead interleave");
    app.add_option("--ref-start,--n0", n0, "initial reference position");
    app.add_option("--seed", seed, "rollout seed");
    app.add_option("--model-seed", model_seed, "weight seed");
    app.add_option("--mask-design", mask_design, "all | GrowingCache | SinkWindow | KnotForcing");
    app.add_option("--out", out, "output directory");
    app.add_option("--dump-config", dump, "write the resolved config and exit");
    app.add_option("--anchor", anchor, "contribution anchor frame");
    app.add_option("--contribution-seeds", seeds, "seeds for the contribution sweep");
    app.add_option("--bench-repeats", repeats, "timed rollouts in bench mode");
    app.add_option("--load-weights", load, "weight blob stem");
    app.add_flag("--save-weights", save, "dump weights next to the outputs");
    app.add_flag("--no-drive", no_drive, "run without a driving signal");
    app.add_flag("--zero-drive", zero_drive, "all-zero driving signal");
    app.add_flag("--no-running-ahead", no_ahead, "keep the reference at its start position");
    app.add_flag("--fast-recache", fast, "rotate cached reference keys on recache");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::Success&) {
        throw;
    } catch (const CLI::ParseError& e) {
        throw ConfigError(e.what());
    }

    json file = config ? read_config_file(*config) : json::object();
    RunSpec spec = run_spec_from_json(file);
    if (config) spec.config_path = *config;
    if (mode) spec.mode = parse_mode(*mode);
    auto& r = spec.rollout;
    if (frames) r.frames = *frames;
    if (c) r.c = *c;
    if (L) r.L = *L;
    if (k) r.k = *k;
    if (!s && !file.contains("ahead_interleave")) r.s = 2 * r.c;
    if (s) r.s = *s;
    if (seed) r.seed = *seed;
    if (no_ahead) r.running_ahead = false;
    if (fast) r.fast_recache = true;
    if (spec.mode == Mode::Baseline) {
        r.k = 0;
        r.running_ahead = false;
    }
    if (n0) {
        r.n0 = *n0;
    } else if (!file.contains("ref_start")) {
        r.n0 = default_ref_start(spec.mode, r);
    }
    if (model_seed) spec.model.seed = *model_seed;
    if (mask_design) spec.mask_design = *mask_design;
    if (out) spec.output_dir = *out;
    if (anchor) spec.anchor = *anchor;
    if (seeds) spec.contribution_seeds = *seeds;
    if (repeats) spec.bench_repeats = *repeats;
    if (load) spec.load_weights = *load;
    if (save) spec.save_weights = true;
    if (no_drive) spec.drive = false;
    if (zero_drive) spec.zero_drive = true;

    validate(spec);
    if (dump_path != nullptr) *dump_path = dump;
    return spec;
}

int run(const RunSpec& spec, std::ostream& log) {
    validate(spec);
    if (const char* env = std::getenv("KNOTFORGE_THREADS")) {
        kernels::set_max_threads(std::atoi(env));
    }
    std::error_code ec;
    fs::create_directories(spec.output_dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + spec.output_dir);
    switch (spec.mode) {
        case Mode::Rollout:
        case Mode::Baseline: return run_rollout(spec, log);
        case Mode::Iou: return run_iou(spec, log);
        case Mode::Contribution: return run_contribution(spec, log);
        case Mode::Bench: return run_bench(spec, log);
    }
    return 1;
}

int main_entry(const std::vector<std::string>& args, std::ostream& log, std::ostream& err) {
    try {
        std::optional<std::string> dump;
        RunSpec spec = parse_args(args, &dump);
        if (dump) {
            std::ofstream out(*dump);
            if (!out) throw ConfigError("cannot write " + *dump);
            out << to_json(spec).dump(2) << '\n';
            log << "config written to " << *dump << '\n';
            return 0;
        }
        return run(spec, log);
    } catch (const CLI::Success&) {
        return 0;
    } catch (const NumericError& e) {
        err << "numeric abort in chunk " << e.chunk() << ": " << e.what() << '\n';
        return 3;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const PositionError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

std::vector<double> ContributionSweep::mean() const {
    std::vector<double> m(frames.size(), 0.0);
    for (const auto& row : scores) {
        for (std::size_t f = 0; f < m.size(); ++f) m[f] += row[f];
    }
    for (double& x : m) x /= static_cast<double>(scores.size());
    return m;
}

ContributionSweep contribution_sweep(const RunSpec& spec) {
    sched::RolloutConfig r = spec.rollout;
    const auto anchor = static_cast<std::size_t>(spec.anchor);
    const std::size_t chunk = anchor / r.c;
    const std::size_t need = (chunk + 1) * r.c + r.k;
    r.frames = std::max(r.frames, (need + r.c - 1) / r.c * r.c);
    r.validate();
    const topology::MaskDesign design{
        spec.mask_design == "all" ? topology::Variant::KnotForcing
                                  : topology::parse_variant(spec.mask_design),
        r.c, r.L, r.k, r.c};
    const auto mask = topology::build_mask(design, r.frames);

    ContributionSweep sweep;
    sweep.anchor = spec.anchor;
    for (std::size_t i = 0; i < spec.contribution_seeds; ++i) {
        model::ModelConfig mc = spec.model;
        mc.seed += i;
        const model::ToyDiT m = spec.load_weights.empty() ? model::ToyDiT(mc)
                                                          : io::load_weights(spec.load_weights);
        sched::RolloutConfig ri = r;
        ri.seed += i;
        const auto out = sched::generate_stream(ri, m);
        std::vector<model::FrameLatent> frames;
        for (std::size_t f = 0; f < out.frames.size(); ++f) {
            frames.push_back(
                model::FrameLatent::generated(out.frames[f], static_cast<std::int64_t>(f), 0.0));
        }
        const auto ref = model::FrameLatent::condition(sched::reference_latent(ri.seed, m.config()),
                                                       out.trace.chunks[chunk].ref_pos);
        const auto inputs =
            m.attention_probe(frames, mask.uses_reference() ? &ref : nullptr);
        const auto scores = topology::frame_contribution(inputs, spec.anchor, mask);
        if (sweep.frames.empty()) {
            for (const auto& sc : scores) sweep.frames.push_back(sc.frame);
        }
        std::vector<double> row;
        for (const auto& sc : scores) row.push_back(sc.score);
        sweep.scores.push_back(std::move(row));
    }
    return sweep;
}

std::vector<std::pair<double, double>> driving_frequencies(std::size_t d_drive,
                                                           std::uint64_t seed) {
    Rng rng{seed, kDriveCounter};
    const auto u = uniform(rng, 2 * d_drive);
    std::vector<std::pair<double, double>> out;
    for (std::size_t d = 0; d < d_drive; ++d) {
        out.emplace_back(0.02 + 0.23 * u[2 * d], 2.0 * std::numbers::pi * u[2 * d + 1]);
    }
    return out;
}

model::DrivingSignal synth_driving(std::size_t frames, std::size_t d_drive, std::uint64_t seed,
                                   bool zeros) {
    Tensor t = Tensor::matrix(frames, d_drive, 0.0f);
    if (!zeros) {
        const auto freq = driving_frequencies(d_drive, seed);
        for (std::size_t f = 0; f < frames; ++f) {
            for (std::size_t d = 0; d < d_drive; ++d) {
                const auto [w, phi] = freq[d];
                t.at(f, d) = static_cast<float>(
                    std::sin(2.0 * std::numbers::pi * static_cast<double>(f) * w + phi));
            }
        }
    }
    return {std::move(t)};
}

}  // namespace knotforge::cli
