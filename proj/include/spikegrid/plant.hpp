#ifndef SPIKEGRID_PLANT_HPP
#define SPIKEGRID_PLANT_HPP

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spikegrid/codec.hpp"
#include "spikegrid/energy.hpp"
#include "spikegrid/sampling.hpp"
#include "spikegrid/signals.hpp"
#include "spikegrid/snn.hpp"

namespace spikegrid {

using cplx = std::complex<double>;

// All electrical quantities are per-unit in a common dq frame rotating at the
// nominal angular frequency. Reactances and susceptances are given at nominal
// frequency, so an inductor obeys (x/w0) di/dt = v and a capacitor
// (b/w0) dv/dt = i.

struct Bus {
    std::string name;
    double g_load = 0.0;   // shunt conductance
    double b_shunt = 0.0;  // shunt susceptance; > 0 makes the bus voltage a state
    bool grid = false;     // prescribed voltage source
    cplx v_grid = {1.0, 0.0};
};

struct Line {
    std::size_t from = 0;
    std::size_t to = 0;
    double r = 0.0;
    double x = 0.0;  // x > 0 integrates a current state; x == 0 is resistive
    bool closed = true;
};

struct VsgParams {
    double h = 0.05;          // inertia constant: 2H dw/dt = P_ref - P_f - D_p(w-1)
    double d_p = 30.0;        // frequency damping
    double k_q = 0.05;        // Q-V droop
    double e0 = 1.02;         // no-load EMF magnitude
    double p_ref = 0.25;
    double q_ref = 0.0;
    double omega_filt = 62.8;  // P/Q measurement filter, rad/s
    double k_v = 2.0;          // voltage loop
    double k_i = 0.5;          // current loop
    double g_sec_v = 5.0;      // secondary average-voltage restoration gain
    double g_sec_q = 5.0;      // secondary Q-sharing gain
    double g_sec_f = 10.0;     // shared frequency restoration gain (first
                               // converter's value governs the global term)
    bool frt_on_targets = true;
};

struct Converter {
    std::size_t bus = 0;
    double s_rated = 1.0;
    double r_f = 0.04;
    double x_f = 0.15;
    double b_f = 0.05;   // filter capacitance, added to the bus shunt
    double v_dc = 1.25;  // EMF = m * v_dc
    double i_max = 1.2;
    VsgParams vsg;
};

enum class DisturbanceKind : std::uint8_t { LoadStep, GridSag, LineOutage, ParamMismatch };

struct Disturbance {
    double t = 0.0;
    DisturbanceKind kind = DisturbanceKind::LoadStep;
    std::size_t target = 0;   // bus, line, or converter index by kind
    double magnitude = 0.0;   // new g_load / new |v_grid| / unused / new v_dc
};

struct Topology {
    std::vector<Bus> buses;
    std::vector<Line> lines;
    std::vector<Converter> converters;

    // Throws std::invalid_argument on inconsistent indices, non-positive
    // impedances, converters on algebraic buses, or a network that loses
    // connectivity under the scheduled outages.
    void validate(const std::vector<Disturbance>& schedule) const;
};

struct SamplingConfig {
    std::size_t window_len = 4000;
    EventThresholds thresholds;
    std::size_t holdoff = 0;
};

struct EncodingConfig {
    double scale_v = 0.8;  // pu -> encoder input multiplier
    double scale_i = 0.8;
};

struct Scenario {
    std::string name = "scenario";
    Topology topology;
    std::vector<Disturbance> schedule;
    double dt = 1e-5;
    double t_end = 1.0;
    double t_settle = 1.0;
    std::uint64_t seed = 1;
    PuBase base;
    CarrierSpec carrier{2e-4, CarrierShape::RisingSawtooth};
    SamplingConfig sampling;
    EncodingConfig encoding;

    void validate() const;  // schedule inside (0, t_end); dt <= 10 us; carrier/dt commensurate
};

struct VsgState {
    double delta = 0.0;   // virtual angle relative to the common frame
    double omega = 1.0;   // virtual frequency, pu
    double p_f = 0.0;     // filtered active power
    double q_f = 0.0;     // filtered reactive power
    double z_v = 0.0;     // secondary voltage-restoration integrator
    double z_q = 0.0;     // secondary Q-sharing integrator
};

struct VsgGlobals {
    double avg_v_mag = 1.0;  // network-average voltage magnitude
    double avg_q_pu = 0.0;   // average per-rated reactive power
    double z_f = 0.0;        // shared frequency-restoration term added to P_ref
};

struct VsgOutput {
    cplx m;            // modulation index, common frame
    bool saturated = false;
    bool frt_active = false;
};

// One discrete controller update. Advances `state` by dt and returns the
// modulation command. Secondary terms use `globals`, which the caller
// computes from all converters (target generation only).
VsgOutput vsg_reference(VsgState& state, const Converter& conv, cplx v_c, cplx i_f,
                        cplx i_o, const VsgGlobals& globals, double dt, double omega0);

// Magnitude clamp preserving the vector angle.
cplx frt_limit(cplx i_ref, double i_max);

struct PlantState {
    double t = 0.0;
    std::vector<cplx> v_bus;   // dynamic buses only, indexed by dyn_index
    std::vector<cplx> i_line;  // dynamic lines only
    std::vector<cplx> i_f;     // converter filter currents

    bool finite() const;
};

struct PlantPowers {
    double p_source = 0.0;  // converter EMF injection
    double p_load = 0.0;    // shunt loads plus grid-bus absorption
    double p_loss = 0.0;    // resistive losses
    double e_stored = 0.0;
};

// Fixed-topology network solver. Holds index maps for dynamic/algebraic
// buses; rebuild after breaker events.
class Network {
public:
    Network(const Topology& topo, double omega0);

    PlantState initial_state() const;

    // One RK4 step with converter EMFs held constant. dt must be <= 10 us.
    void step(PlantState& st, const std::vector<cplx>& emf, double dt) const;

    // Bus voltages for the full bus list (algebraic buses solved on demand).
    std::vector<cplx> bus_voltages(const PlantState& st,
                                   const std::vector<cplx>& emf) const;

    PlantPowers powers(const PlantState& st, const std::vector<cplx>& emf) const;

    const Topology& topology() const { return *topo_; }
    void set_topology(const Topology& topo);  // keeps index layout requirements

private:
    const Topology* topo_;
    double omega0_;
    std::vector<int> dyn_index_;   // bus -> state slot or -1
    std::vector<int> alg_index_;   // bus -> algebraic slot or -1
    std::vector<std::size_t> dyn_lines_;
    std::vector<std::size_t> static_lines_;

    void rebuild();
    void derivatives(const PlantState& st, const std::vector<cplx>& emf,
                     PlantState& dst) const;
    void solve_algebraic(const PlantState& st, const std::vector<cplx>& emf,
                         std::vector<cplx>& v_all) const;
};

enum class Controller : std::uint8_t { VsgDirect, Snn };

struct RunOptions {
    Controller controller = Controller::VsgDirect;
    const SnnModel* model = nullptr;          // required for Controller::Snn
    const SnnModel* adapted_model = nullptr;  // optional swap at first reconfiguration
    bool frt_runtime = false;                 // protection current loop around the SNN
    std::size_t decimation = 10;              // trace row stride
    bool record_dataset = false;              // capture gated (spikes, m_abc) pairs
    bool record_hidden = false;               // first hidden layer raster
    std::string divergence_dump;              // state dump target on non-finite abort
};

struct TraceRow {
    double t = 0.0;
    std::vector<cplx> v_bus;  // all buses
    std::vector<cplx> i_f;
    std::vector<cplx> m;      // applied modulation per converter
    std::vector<double> p, q;
    std::vector<double> omega;
    std::uint8_t status = 0;  // 1 while any gate is Active
    std::uint32_t active_neurons = 0;
};

struct PwmRow {
    double t = 0.0;
    std::vector<double> duty;  // 3 per converter, a,b,c order
};

struct RunSummary {
    bool unstable = false;
    bool overcurrent = false;
    bool diverged = false;
    double max_balance_residual = 0.0;
    double max_v_mag = 0.0;
    double max_i_mag = 0.0;
    double q_sharing_err = 0.0;    // mean |Q_i - Q_j| over the metric window
    double v_reg_err = 0.0;        // | window mean of bus-avg |v|, minus 1 |
    double metric_window_begin = 0.0;
    double metric_window_end = 0.0;
    std::uint64_t saturation_count = 0;
    std::uint64_t clamp_count = 0;  // encoder inputs clamped
    std::size_t n_events = 0;
    std::uint64_t forwarded_samples = 0;
    std::uint64_t hidden_spikes = 0;
    bool model_swapped = false;
};

struct RunArtifacts {
    RunSummary summary;
    std::vector<TraceRow> rows;
    std::vector<PwmRow> pwm;                        // snn runs
    std::vector<std::vector<EventRecord>> events;   // per converter
    ActivityTrace activity;                         // merged across converters
    std::vector<TrainingBatch> dataset;             // vsg_direct + record_dataset
    SpikeTrain encoder_spikes;                      // 6*n_conv channels, full grid
    SpikeTrain hidden_raster;                       // optional
};

// Settles under vsg_direct for t_settle, then runs the scenario with the
// chosen controller. Deterministic for fixed scenario + seed.
RunArtifacts run_scenario(const Scenario& scenario, const RunOptions& opt);

}  // namespace spikegrid

#endif  // SPIKEGRID_PLANT_HPP
