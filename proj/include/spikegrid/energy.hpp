#ifndef SPIKEGRID_ENERGY_HPP
#define SPIKEGRID_ENERGY_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace spikegrid {

enum class Architecture : std::uint8_t { Snn, BinaryRnn, Ann };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

// Per-step activity extracted from a run: how many neurons received or
// emitted a spike, and whether the event gate was Active.
struct ActivityTrace {
    std::vector<std::uint32_t> active;  // active neuron count per step
    std::vector<std::uint8_t> status;   // 1 = event-on (Active), 0 = Idle
    double dt = 0.0;
    std::size_t total_neurons = 0;   // all layers, input channels included
    std::size_t state_neurons = 0;   // neurons latching state through idle spans
};

struct ActivityReport {
    std::optional<double> n_on;        // mean active neurons over event-on steps
    double n_off = 0.0;                // mean active neurons over idle steps
    std::vector<double> n_on_per_event;
    std::size_t n_events = 0;
    double horizon_s = 0.0;
    double on_fraction = 0.0;          // share of steps spent event-on
};

struct EnergyModel {
    double e_data_pj = 23.6;  // energy per active neuron-update
    double f_op_hz = 1e6;     // neuron-update rate
    Architecture architecture = Architecture::Snn;

    void validate() const;  // e_data_pj > 0, f_op_hz > 0
};

struct PowerEstimate {
    double p_on_mw = 0.0;
    double p_off_mw = 0.0;
};

// Counts per the architecture's activity rule:
//   snn         active iff received or emitted a spike; nothing during idle
//   binary_rnn  like snn while event-on; state neurons stay latched while idle
//   ann         every neuron, every step
// Throws std::invalid_argument when the needed counters are absent.
ActivityReport count_activity(const ActivityTrace& trace, Architecture arch);

// P = N * E_data * f_op, reported in milliwatts.
PowerEstimate power(const ActivityReport& report, const EnergyModel& model);

struct EnergyRow {
    std::string architecture;
    double p_off_mw = 0.0;
    double p_on_mw = 0.0;
    double n_on = 0.0;
    double n_off = 0.0;
    double e_data_pj = 0.0;
};

// Published comparison numbers the linear model must reproduce.
std::vector<EnergyRow> reference_energy_rows();

void write_energy_csv(const std::string& path, const std::vector<EnergyRow>& rows);

}  // namespace spikegrid

#endif  // SPIKEGRID_ENERGY_HPP
