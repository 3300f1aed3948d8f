#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "spikegrid/harness.hpp"

namespace fs = std::filesystem;

namespace spikegrid {

namespace {

using nlohmann::json;

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

void must_open(std::ofstream& os, const std::string& path)
{
    if (!os) throw std::runtime_error("bundle: cannot write '" + path + "'");
}

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary);
    must_open(os, path);
    os << text;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed)
{
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("bundle: cannot read '" + path + "'");
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof buf);
        h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    }
    return h;
}

std::string hex64(std::uint64_t v)
{
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json summary_to_json(const RunSummary& s)
{
    json j;
    j["unstable"] = s.unstable;
    j["overcurrent"] = s.overcurrent;
    j["diverged"] = s.diverged;
    j["max_balance_residual"] = s.max_balance_residual;
    j["max_v_mag"] = s.max_v_mag;
    j["max_i_mag"] = s.max_i_mag;
    j["q_sharing_err"] = s.q_sharing_err;
    j["v_reg_err"] = s.v_reg_err;
    j["metric_window_begin"] = s.metric_window_begin;
    j["metric_window_end"] = s.metric_window_end;
    j["saturation_count"] = s.saturation_count;
    j["clamp_count"] = s.clamp_count;
    j["n_events"] = s.n_events;
    j["forwarded_samples"] = s.forwarded_samples;
    j["hidden_spikes"] = s.hidden_spikes;
    j["model_swapped"] = s.model_swapped;
    return j;
}

namespace {

void write_trace_csv(const std::string& path, const RunArtifacts& art,
                     const Topology& topo)
{
    std::ofstream os(path, std::ios::binary);
    must_open(os, path);
    os << "t";
    for (const Bus& b : topo.buses)
        os << ",v_" << b.name << "_re,v_" << b.name << "_im";
    for (std::size_t c = 0; c < topo.converters.size(); ++c)
        os << ",i_c" << c << "_re,i_c" << c << "_im,m_c" << c << "_re,m_c" << c
           << "_im,p_c" << c << ",q_c" << c << ",omega_c" << c;
    os << ",status,active_neurons\n";
    for (const TraceRow& r : art.rows) {
        os << fmt(r.t);
        for (const cplx& v : r.v_bus) os << ',' << fmt(v.real()) << ',' << fmt(v.imag());
        for (std::size_t c = 0; c < r.i_f.size(); ++c)
            os << ',' << fmt(r.i_f[c].real()) << ',' << fmt(r.i_f[c].imag()) << ','
               << fmt(r.m[c].real()) << ',' << fmt(r.m[c].imag()) << ',' << fmt(r.p[c])
               << ',' << fmt(r.q[c]) << ',' << fmt(r.omega[c]);
        os << ',' << static_cast<int>(r.status) << ',' << r.active_neurons << '\n';
    }
}

void write_pwm_csv(const std::string& path, const RunArtifacts& art, std::size_t n_conv)
{
    std::ofstream os(path, std::ios::binary);
    must_open(os, path);
    os << "t";
    for (std::size_t c = 0; c < n_conv; ++c)
        os << ",duty_c" << c << "_a,duty_c" << c << "_b,duty_c" << c << "_c";
    os << '\n';
    for (const PwmRow& r : art.pwm) {
        os << fmt(r.t);
        for (double d : r.duty) os << ',' << fmt(d);
        os << '\n';
    }
}

void write_activity_csv(const std::string& path, const ActivityTrace& tr)
{
    // Run-length encoded: one row per (active, status) run.
    std::ofstream os(path, std::ios::binary);
    must_open(os, path);
    os << "n_steps,active,status\n";
    std::size_t i = 0;
    while (i < tr.active.size()) {
        std::size_t j = i + 1;
        while (j < tr.active.size() && tr.active[j] == tr.active[i] &&
               tr.status[j] == tr.status[i])
            ++j;
        os << (j - i) << ',' << tr.active[i] << ',' << static_cast<int>(tr.status[i])
           << '\n';
        i = j;
    }
}

}  // namespace

ActivityTrace read_activity_csv(const std::string& path, double dt,
                                std::size_t total_neurons, std::size_t state_neurons)
{
    std::ifstream is(path);
    if (!is) throw std::runtime_error("bundle: cannot read '" + path + "'");
    ActivityTrace tr;
    tr.dt = dt;
    tr.total_neurons = total_neurons;
    tr.state_neurons = state_neurons;
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::size_t n = 0;
        unsigned long active = 0;
        int status = 0;
        if (std::sscanf(line.c_str(), "%zu,%lu,%d", &n, &active, &status) != 3)
            throw std::runtime_error("bundle: bad activity row '" + line + "'");
        tr.active.insert(tr.active.end(), n, static_cast<std::uint32_t>(active));
        tr.status.insert(tr.status.end(), n, static_cast<std::uint8_t>(status));
    }
    return tr;
}

std::uint64_t write_trace_bundle(const std::string& dir, const RunConfigFile& cfg,
                                 const json& options_echo, const RunArtifacts& art)
{
    fs::create_directories(dir);
    // Stale artifacts from a previous layout must not leak into the hash.
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) fs::remove(e.path());

    const Topology& topo = cfg.scenario.topology;
    const std::size_t n_conv = topo.converters.size();

    write_trace_csv(dir + "/trace.csv", art, topo);
    if (!art.pwm.empty()) write_pwm_csv(dir + "/pwm.csv", art, n_conv);
    write_activity_csv(dir + "/activity.csv", art.activity);
    for (std::size_t c = 0; c < n_conv; ++c)
        write_event_log(dir + "/events_c" + std::to_string(c) + ".csv", art.events[c]);
    if (art.encoder_spikes.channels() > 0) {
        std::vector<std::string> names;
        for (std::size_t c = 0; c < n_conv; ++c)
            for (const char* ch : {"v_a", "v_b", "v_c", "i_a", "i_b", "i_c"})
                names.push_back("c" + std::to_string(c) + "_" + ch);
        art.encoder_spikes.save_rle(dir + "/spikes.spk", names);
    }
    if (art.hidden_raster.channels() > 0) {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < art.hidden_raster.channels(); ++i)
            names.push_back("h" + std::to_string(i));
        art.hidden_raster.save_rle(dir + "/hidden.spk", names);
    }

    // Per-run energy table: the same activity trace priced under each
    // architecture's counting rule.
    if (art.activity.total_neurons > 0) {
        std::vector<EnergyRow> rows;
        for (Architecture a : {Architecture::Snn, Architecture::BinaryRnn, Architecture::Ann}) {
            EnergyModel m;
            m.architecture = a;
            if (a == Architecture::Ann) m.e_data_pj = 116.7;
            const ActivityReport rep = count_activity(art.activity, a);
            const PowerEstimate pe = power(rep, m);
            EnergyRow row;
            row.architecture = to_string(a);
            row.p_off_mw = pe.p_off_mw;
            row.p_on_mw = pe.p_on_mw;
            row.n_on = rep.n_on.value_or(0.0);
            row.n_off = rep.n_off;
            row.e_data_pj = m.e_data_pj;
            rows.push_back(std::move(row));
        }
        write_energy_csv(dir + "/energy.csv", rows);
    }

    // Hash everything but the manifest, sorted by file name.
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json")
            files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());

    std::uint64_t bundle_hash = 0xcbf29ce484222325ull;
    json file_hashes;
    for (const std::string& f : files) {
        const std::uint64_t h = fnv1a64_file(dir + "/" + f);
        file_hashes[f] = hex64(h);
        bundle_hash = fnv1a64(f.data(), f.size(), bundle_hash);
        bundle_hash = fnv1a64(&h, sizeof h, bundle_hash);
    }

    json manifest;
    manifest["format_version"] = 1;
    manifest["config"] = cfg.effective;
    manifest["options"] = options_echo;
    manifest["summary"] = summary_to_json(art.summary);
    manifest["files"] = file_hashes;
    manifest["bundle_hash"] = hex64(bundle_hash);
    manifest["activity"] = {{"dt", art.activity.dt},
                            {"total_neurons", art.activity.total_neurons},
                            {"state_neurons", art.activity.state_neurons}};
    write_text(dir + "/manifest.json", manifest.dump(2) + "\n");
    return bundle_hash;
}

void write_dataset(const std::string& dir, const std::vector<TrainingBatch>& batches,
                   const json& extra_manifest)
{
    fs::create_directories(dir);
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) fs::remove(e.path());

    json entries = json::array();
    const std::vector<std::string> in_names{"v_a", "v_b", "v_c", "i_a", "i_b", "i_c"};
    for (std::size_t i = 0; i < batches.size(); ++i) {
        const TrainingBatch& b = batches[i];
        const std::string stem = "batch_" + std::to_string(i);
        b.input.save_rle(dir + "/" + stem + ".spk", in_names);

        const std::string tpath = dir + "/" + stem + "_targets.csv";
        std::ofstream os(tpath, std::ios::binary);
        must_open(os, tpath);
        os << "m_a,m_b,m_c\n";
        for (std::size_t k = 0; k < b.target[0].size(); ++k)
            os << fmt(b.target[0][k]) << ',' << fmt(b.target[1][k]) << ','
               << fmt(b.target[2][k]) << '\n';

        entries.push_back({{"spikes", stem + ".spk"},
                           {"targets", stem + "_targets.csv"},
                           {"steps", b.input.steps()},
                           {"t0", b.input.t0()},
                           {"dt", b.input.dt()}});
    }
    json manifest;
    manifest["format_version"] = 1;
    manifest["n_batches"] = batches.size();
    manifest["batches"] = entries;
    manifest["extra"] = extra_manifest;
    write_text(dir + "/dataset.json", manifest.dump(2) + "\n");
}

std::vector<TrainingBatch> load_dataset(const std::string& dir)
{
    const json manifest = load_json_file(dir + "/dataset.json");
    std::vector<TrainingBatch> out;
    for (const json& e : manifest.at("batches")) {
        TrainingBatch b;
        b.input = SpikeTrain::load_rle(dir + "/" + e.at("spikes").get<std::string>());

        const std::string tpath = dir + "/" + e.at("targets").get<std::string>();
        std::ifstream is(tpath);
        if (!is) throw std::runtime_error("dataset: cannot read '" + tpath + "'");
        b.target.assign(3, {});
        std::string line;
        std::getline(is, line);  // header
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            double a = 0, bb = 0, c = 0;
            if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &a, &bb, &c) != 3)
                throw std::runtime_error("dataset: bad target row '" + line + "'");
            b.target[0].push_back(a);
            b.target[1].push_back(bb);
            b.target[2].push_back(c);
        }
        b.validate(6, 3);
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace spikegrid
