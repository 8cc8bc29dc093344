#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace chemnne {

/// The three driving conditions a sample is simulated under.
struct Environment {
    double temperature = 288.15;  // K
    double humidity = 0.5;        // relative, [0, 1]
    double radiation = 500.0;     // W/m^2, short-wave
    void validate() const;
};

struct Term {
    int species = -1;
    int stoich = 1;
};

/// One mass-action reaction. `ea` is the activation temperature (Ea folded
/// with the gas constant, in K); `photo` replaces the thermal factor with a
/// radiation/1000 scaling; `h2o` additionally scales linearly with humidity.
struct Reaction {
    std::vector<Term> reactants;
    std::vector<Term> products;
    double k0 = 0.0;
    double ea = 0.0;
    bool photo = false;
    bool h2o = false;
};

struct Mechanism {
    std::vector<std::string> species;
    std::vector<Reaction> reactions;
    std::vector<std::string> atom_names;
    /// composition[species][atom]; empty when no atom lines were given.
    std::vector<std::vector<int>> composition;

    int species_index(const std::string& name) const;
    bool has_composition() const { return !atom_names.empty(); }
    std::size_t n_species() const { return species.size(); }
};

/// Text format, one construct per line, `#` comments:
///   R1 [+ R2 ...] -> P1 [+ P2 ...] ; k0=<float> [ea=<float>] [photo] [h2o]
///   atoms <species> <atom>=<int> ...
/// Species are introduced by the reactions. Repeating a species on a side
/// raises its stoichiometry. When any atoms line is present, every species
/// needs one and every reaction must balance.
Mechanism parse_mechanism(const std::string& text);
Mechanism load_mechanism(const std::string& path);

/// Per-reaction rate constants under the given environment.
std::vector<double> reaction_rates(const Mechanism& mech, const Environment& env);

/// Mass-action right-hand side and its dense analytic Jacobian
/// (jac[i * n + m] = d(dc_i/dt)/dc_m).
void rhs_and_jacobian(const Mechanism& mech, const std::vector<double>& rates,
                      const std::vector<double>& conc, std::vector<double>& dcdt,
                      std::vector<double>& jac);

struct IntegrateOptions {
    double newton_tol = 1e-10;   // absolute, on the update
    int max_newton_iters = 20;
    double refine_rel = 1e-6;    // agreement between successive refinements
    std::size_t max_substeps = std::size_t(1) << 16;
    double clip_fail_fraction = 0.05;
    long sample_id = -1;
};

/// Backward Euler with Newton iteration over fixed substeps; returns
/// concentrations at n_outputs equally spaced times t_end*k/n_outputs
/// (k = 1..n_outputs), row-major [n_outputs x n_species].
/// n_substeps is rounded up to a multiple of n_outputs.
std::vector<double> integrate_fixed(const Mechanism& mech, const Environment& env,
                                    const std::vector<double>& c0, double t_end,
                                    std::size_t n_outputs, std::size_t n_substeps,
                                    const IntegrateOptions& opts = {});

/// integrate_fixed under substep doubling until the Richardson extrapolants
/// of successive refinement pairs agree within refine_rel (scaled per
/// species) at every output point; returns the final extrapolant, clipped
/// at zero. Failure to converge by the substep cap raises IntegrationError
/// with the sample id.
std::vector<double> integrate(const Mechanism& mech, const Environment& env,
                              const std::vector<double>& c0, double t_end,
                              std::size_t n_outputs, const IntegrateOptions& opts = {});

}  // namespace chemnne
