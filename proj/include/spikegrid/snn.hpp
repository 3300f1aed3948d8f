#ifndef SPIKEGRID_SNN_HPP
#define SPIKEGRID_SNN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "spikegrid/codec.hpp"

namespace spikegrid {

// Euler-discretized leaky integrate-and-fire parameters.
struct LifParams {
    double tau_m = 4e-3;    // membrane time constant, s
    double v_th = 1.0;      // firing threshold
    double g_l = 1.0;       // leak conductance
    double v_rest = 0.0;    // rest potential; v_rest = v_th recovers the
                            // threshold-leaking variant
    double v_reset = 0.0;   // hard reset target after a spike
    double dt = 1e-5;       // Euler step, s

    // Throws std::invalid_argument unless tau_m > 0, g_l > 0, dt < tau_m/5
    // and v_reset <= v_th.
    void validate() const;
};

struct LifStepResult {
    double v_next;
    bool fired;
};

// One Euler step:
//   v' = v*(1 - dt/tau_m) + (dt/tau_m)*(v_rest + i_syn/g_l)
// followed by threshold/reset. The factored leak keeps zero-input decay an
// exact geometric sequence.
LifStepResult lif_step(double v, double i_syn, const LifParams& p);

// Switched-RC realization of the same dynamics with stored charge q = C*v.
struct RcEquivalence {
    double resistance = 0.0;   // ohm
    double capacitance = 0.0;  // farad
    double tau_rc = 0.0;       // seconds, = R*C

    // Charge-domain Euler step; q/capacitance reproduces lif_step's membrane
    // trajectory (thresholding aside).
    double charge_step(double q, double i_syn, const LifParams& p) const;
};

// Identify R and tau_rc so the charge dynamics mirror the voltage dynamics.
// Requires capacitance > 0.
RcEquivalence rc_map(const LifParams& p, double capacitance);

// Double-exponential synaptic kernel. Hidden layers scale it to unit peak
// for a unit input weight; the readout scales it to unit area so its
// output tracks presynaptic rates with order-one weights.
struct SynapseKernel {
    double tau_rise = 4e-4;
    double tau_decay = 2e-3;

    double peak_norm() const;  // 1 / peak of (exp(-t/tau_decay) - exp(-t/tau_rise))
    void validate() const;     // 0 < tau_rise < tau_decay
};

enum class SpikeMode : std::uint8_t {
    Hard,    // binary spikes, surrogate derivative in backward
    Smooth,  // graded spikes s = S(v - v_th); forward is differentiable and
             // backward is its exact derivative (gradient-check mode)
};

struct SnnConfig {
    std::vector<std::size_t> layer_sizes = {6, 256, 256, 3};
    double dt = 1e-5;
    double tau_m_hidden = 4e-3;
    double tau_m_output = 5e-4;
    double v_th = 1.0;
    double v_rest = 0.0;
    double v_reset = 0.0;
    double g_l = 1.0;
    double tau_rise = 4e-4;   // defaults: tau_m_hidden/10
    double tau_decay = 2e-3;  // defaults: tau_m_hidden/2
    double surrogate_slope = 10.0;
    double init_gain = 3.0;   // weight std = init_gain / sqrt(fan_in)
    std::uint64_t seed = 1;
};

// One trainable layer; weights stored column-major (w[pre * n_out + post]) so
// spike-driven forward touches contiguous columns.
struct SnnLayer {
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    LifParams lif;
    SynapseKernel kernel;
    bool spiking = true;  // false for the output layer (membrane readout)
    std::vector<double> w;

    double& at(std::size_t pre, std::size_t post) { return w[pre * n_out + post]; }
    double at(std::size_t pre, std::size_t post) const { return w[pre * n_out + post]; }
};

// Per-layer dynamic state for streaming inference.
struct LayerState {
    std::vector<double> e_decay;  // slow kernel accumulator
    std::vector<double> e_rise;   // fast kernel accumulator
    std::vector<double> v;        // membrane
    std::vector<double> s;        // last emitted spikes (graded in Smooth mode)

    void reset();
};

struct ForwardTrace {
    std::vector<std::vector<double>> u;            // output membranes, n_out x T
    std::vector<std::uint64_t> layer_spikes;       // total spikes per non-input layer
    std::vector<std::uint32_t> active_per_step;    // network-wide active neurons
    SpikeTrain first_hidden_raster;                // populated when requested
};

struct TrainOptions {
    std::size_t epochs = 60;
    double lr = 2e-3;
    double lr_decay = 1.0;  // per-epoch multiplier; < 1 anneals the step size
    double grad_clip = 0.0;  // global L2 cap per segment; 0 disables
    std::size_t segment_len = 2000;  // BPTT truncation window
    std::size_t warmup_steps = 0;  // per batch: build state, no updates, no loss
    std::uint64_t seed = 1;
    SpikeMode mode = SpikeMode::Hard;
    double divergence_limit = 1e7;  // untrained readouts legitimately start near 1e3
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool shuffle_segments = true;  // seeded, deterministic
    bool online_single_pass = false;  // one in-order pass, no shuffle
    std::string snapshot_path;     // divergence diagnostics target (optional)
};

struct TrainingBatch {
    SpikeTrain input;                       // n_in x T
    std::vector<std::vector<double>> target;  // n_out x T in [-1, 1]

    void validate(std::size_t n_in, std::size_t n_out) const;
};

struct TrainResult {
    std::vector<double> loss_history;  // per epoch, mean MSE
    double final_loss = 0.0;
    bool diverged = false;
};

struct GradientBuffers {
    std::vector<std::vector<double>> w;  // per layer, same layout as SnnLayer::w
};

class SnnModel {
public:
    static SnnModel build(const SnnConfig& cfg);

    const SnnConfig& config() const { return cfg_; }
    const std::vector<SnnLayer>& layers() const { return layers_; }
    std::vector<SnnLayer>& layers() { return layers_; }
    std::size_t n_in() const { return cfg_.layer_sizes.front(); }
    std::size_t n_out() const { return cfg_.layer_sizes.back(); }
    std::size_t total_neurons() const;  // includes input channels

    // Whole-trace inference. `record_first_hidden` additionally captures the
    // first hidden layer's spike raster for export.
    ForwardTrace forward(const SpikeTrain& input, SpikeMode mode = SpikeMode::Hard,
                         bool record_first_hidden = false) const;

    // Loss and gradient of the MSE loss over one batch via
    // backpropagation-through-time. Returns the loss.
    double loss_and_gradient(const TrainingBatch& batch, SpikeMode mode,
                             GradientBuffers& grads) const;

    double mse(const TrainingBatch& batch, SpikeMode mode) const;

    // Checkpoint: versioned binary with a JSON header.
    void save(const std::string& path, const std::string& metadata_json = "{}") const;
    static SnnModel load(const std::string& path);
    static std::string peek_metadata(const std::string& path);

private:
    SnnConfig cfg_;
    std::vector<SnnLayer> layers_;
};

// Streaming single-step runner around an SnnModel; used by the closed loop.
class SnnRuntime {
public:
    explicit SnnRuntime(const SnnModel& model);

    void reset();

    // Advances one step with binary input spikes (size n_in). Returns the
    // output membrane values for this step in `u_out` (size n_out) and the
    // count of active neurons (received or emitted a spike, input included).
    std::uint32_t step(const std::uint8_t* in_bits, double* u_out);

    // Swaps the weight set mid-run (parameter adaptation); layer shapes must
    // match. Dynamic state is preserved.
    void swap_model(const SnnModel& model);

    std::uint64_t hidden_spike_total() const { return hidden_spike_total_; }

    // Spike vector of the first hidden layer after the latest step (raster
    // capture).
    const std::vector<double>& first_hidden() const { return states_.front().s; }

private:
    const SnnModel* model_;
    std::vector<LayerState> states_;
    std::vector<double> scratch_in_;
    std::vector<double> coeff_cache_;  // per-layer kernel peak normalization
    std::uint64_t hidden_spike_total_ = 0;

    void rebuild_coeffs();
};

// Backprop-through-time training with the Adam update. Deterministic for a
// fixed seed on a single thread. Divergence (non-finite or loss above the
// limit) stops training, optionally writes a JSON snapshot, and flags the
// result.
TrainResult train(SnnModel& model, const std::vector<TrainingBatch>& data,
                  const TrainOptions& opt);

// Experimental correlation-driven alternative update (STDP-flavored hidden
// rule, delta-rule readout). Not used by the standard pipeline.
TrainResult train_hebbian(SnnModel& model, const std::vector<TrainingBatch>& data,
                          const TrainOptions& opt);

void write_loss_csv(const std::string& path, const std::vector<double>& history);

}  // namespace spikegrid

#endif  // SPIKEGRID_SNN_HPP
