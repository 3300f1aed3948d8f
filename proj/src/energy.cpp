#include "spikegrid/energy.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace spikegrid {

std::string to_string(Architecture a)
{
    switch (a) {
        case Architecture::Snn: return "snn";
        case Architecture::BinaryRnn: return "binary_rnn";
        case Architecture::Ann: return "ann";
    }
    throw std::invalid_argument("architecture: bad enum value");
}

Architecture architecture_from_string(const std::string& s)
{
    if (s == "snn") return Architecture::Snn;
    if (s == "binary_rnn") return Architecture::BinaryRnn;
    if (s == "ann") return Architecture::Ann;
    throw std::invalid_argument("architecture: unknown name '" + s + "'");
}

void EnergyModel::validate() const
{
    if (!(e_data_pj > 0.0) || !std::isfinite(e_data_pj))
        throw std::invalid_argument("energy model: E_data must be positive");
    if (!(f_op_hz > 0.0) || !std::isfinite(f_op_hz))
        throw std::invalid_argument("energy model: f_op must be positive");
}

ActivityReport count_activity(const ActivityTrace& trace, Architecture arch)
{
    if (trace.active.empty())
        throw std::invalid_argument("activity: empty trace");
    if (trace.status.size() != trace.active.size())
        throw std::invalid_argument("activity: status/active length mismatch");
    if (trace.total_neurons == 0)
        throw std::invalid_argument("activity: total neuron count missing");
    if (arch == Architecture::BinaryRnn && trace.state_neurons == 0)
        throw std::invalid_argument("activity: state neuron count missing for binary_rnn");

    ActivityReport rep;
    rep.horizon_s = trace.dt * static_cast<double>(trace.active.size());

    double on_sum = 0.0, off_sum = 0.0;
    std::size_t on_steps = 0, off_steps = 0;
    double event_sum = 0.0;
    std::size_t event_steps = 0;
    bool in_event = false;

    for (std::size_t k = 0; k < trace.active.size(); ++k) {
        const bool on = trace.status[k] != 0;
        double a;
        switch (arch) {
            case Architecture::Snn:
                a = static_cast<double>(trace.active[k]);
                break;
            case Architecture::BinaryRnn:
                a = on ? static_cast<double>(trace.active[k])
                       : static_cast<double>(trace.state_neurons);
                break;
            case Architecture::Ann:
            default:
                a = static_cast<double>(trace.total_neurons);
                break;
        }
        if (on) {
            on_sum += a;
            ++on_steps;
            if (!in_event) {
                in_event = true;
                event_sum = 0.0;
                event_steps = 0;
            }
            event_sum += a;
            ++event_steps;
        } else {
            off_sum += a;
            ++off_steps;
            if (in_event) {
                in_event = false;
                rep.n_on_per_event.push_back(event_sum / static_cast<double>(event_steps));
            }
        }
    }
    if (in_event)
        rep.n_on_per_event.push_back(event_sum / static_cast<double>(event_steps));

    rep.n_events = rep.n_on_per_event.size();
    if (on_steps > 0) rep.n_on = on_sum / static_cast<double>(on_steps);
    rep.n_off = (off_steps > 0) ? off_sum / static_cast<double>(off_steps) : 0.0;
    rep.on_fraction =
        static_cast<double>(on_steps) / static_cast<double>(trace.active.size());
    return rep;
}

PowerEstimate power(const ActivityReport& report, const EnergyModel& model)
{
    model.validate();
    // N * E_data[pJ] * f_op[Hz] in pW; 1e-9 converts to mW.
    const double scale = model.e_data_pj * model.f_op_hz * 1e-9;
    PowerEstimate p;
    p.p_on_mw = report.n_on.value_or(0.0) * scale;
    p.p_off_mw = report.n_off * scale;
    return p;
}

std::vector<EnergyRow> reference_energy_rows()
{
    return {
        {"snn", 0.0, 8.08, 342.4, 0.0, 23.6},
        {"binary_rnn", 6.06, 8.50, 360.0, 256.6, 23.6},
        {"ann", 60.80, 60.80, 521.0, 521.0, 116.7},
    };
}

void write_energy_csv(const std::string& path, const std::vector<EnergyRow>& rows)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("energy csv: cannot open " + path);
    out << "architecture,P_off_mW,P_on_mW,N_on,N_off,E_data_pJ\n";
    for (const auto& r : rows)
        out << r.architecture << "," << r.p_off_mw << "," << r.p_on_mw << ","
            << r.n_on << "," << r.n_off << "," << r.e_data_pj << "\n";
}

}  // namespace spikegrid
