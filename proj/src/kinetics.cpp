#include "chemnne/kinetics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "chemnne/errors.hpp"

namespace chemnne {

namespace {

constexpr double kReferenceTempK = 298.15;

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (const char c : s) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    }
    return true;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

// "A + B + A" -> terms with stoichiometry; registers new species.
std::vector<Term> parse_side(const std::string& side, std::size_t line,
                             std::vector<std::string>& species,
                             std::map<std::string, int>& index) {
    std::vector<Term> terms;
    std::size_t pos = 0;
    while (pos <= side.size()) {
        const auto plus = side.find('+', pos);
        const std::string name =
            trim(side.substr(pos, plus == std::string::npos ? std::string::npos : plus - pos));
        if (!valid_name(name)) {
            throw ParseError(line, "bad species name '" + name + "'");
        }
        auto it = index.find(name);
        int idx;
        if (it == index.end()) {
            idx = static_cast<int>(species.size());
            index.emplace(name, idx);
            species.push_back(name);
        } else {
            idx = it->second;
        }
        bool merged = false;
        for (auto& t : terms) {
            if (t.species == idx) {
                ++t.stoich;
                merged = true;
                break;
            }
        }
        if (!merged) terms.push_back({idx, 1});
        if (plus == std::string::npos) break;
        pos = plus + 1;
    }
    return terms;
}

// Solves a x = b in place with partial pivoting; returns false when singular.
bool lu_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        double best = std::abs(a[col * n + col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double v = std::abs(a[r * n + col]);
            if (v > best) {
                best = v;
                pivot = r;
            }
        }
        if (best == 0.0) return false;
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
            std::swap(b[col], b[pivot]);
        }
        const double inv = 1.0 / a[col * n + col];
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] * inv;
            if (f == 0.0) continue;
            a[r * n + col] = 0.0;
            for (std::size_t c = col + 1; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    for (std::size_t r = n; r-- > 0;) {
        double s = b[r];
        for (std::size_t c = r + 1; c < n; ++c) s -= a[r * n + c] * b[c];
        b[r] = s / a[r * n + r];
    }
    return true;
}

double int_pow(double x, int e) {
    double out = 1.0;
    for (int i = 0; i < e; ++i) out *= x;
    return out;
}

}  // namespace

void Environment::validate() const {
    if (!(temperature > 0.0)) throw ConfigError("environment: temperature must be > 0 K");
    if (humidity < 0.0 || humidity > 1.0) {
        throw ConfigError("environment: humidity must lie in [0, 1]");
    }
    if (radiation < 0.0) throw ConfigError("environment: radiation must be >= 0");
}

int Mechanism::species_index(const std::string& name) const {
    for (std::size_t i = 0; i < species.size(); ++i) {
        if (species[i] == name) return static_cast<int>(i);
    }
    return -1;
}

Mechanism parse_mechanism(const std::string& text) {
    Mechanism mech;
    std::map<std::string, int> index;
    struct AtomLine {
        std::size_t line;
        std::string species;
        std::vector<std::pair<std::string, int>> counts;
    };
    std::vector<AtomLine> atom_lines;
    std::vector<std::size_t> reaction_lines;

    std::istringstream is(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;

        if (line.rfind("atoms ", 0) == 0 || line == "atoms") {
            const auto tokens = split_ws(line);
            if (tokens.size() < 3) {
                throw ParseError(line_no, "atoms line needs a species and at least one count");
            }
            AtomLine al{line_no, tokens[1], {}};
            for (std::size_t i = 2; i < tokens.size(); ++i) {
                const auto eq = tokens[i].find('=');
                if (eq == std::string::npos) {
                    throw ParseError(line_no, "expected <atom>=<count>, got '" + tokens[i] + "'");
                }
                const std::string atom = tokens[i].substr(0, eq);
                int count = 0;
                try {
                    count = std::stoi(tokens[i].substr(eq + 1));
                } catch (const std::exception&) {
                    throw ParseError(line_no, "bad atom count in '" + tokens[i] + "'");
                }
                if (!valid_name(atom) || count < 0) {
                    throw ParseError(line_no, "bad atom count in '" + tokens[i] + "'");
                }
                al.counts.emplace_back(atom, count);
            }
            atom_lines.push_back(std::move(al));
            continue;
        }

        const auto arrow = line.find("->");
        if (arrow == std::string::npos) {
            throw ParseError(line_no, "expected a reaction ('->') or an atoms line");
        }
        const auto semi = line.find(';', arrow);
        if (semi == std::string::npos) {
            throw ParseError(line_no, "missing '; k0=...' parameter block");
        }
        Reaction rxn;
        rxn.reactants = parse_side(line.substr(0, arrow), line_no, mech.species, index);
        rxn.products =
            parse_side(line.substr(arrow + 2, semi - arrow - 2), line_no, mech.species, index);

        bool have_k0 = false;
        for (const auto& tok : split_ws(line.substr(semi + 1))) {
            if (tok == "photo") {
                rxn.photo = true;
            } else if (tok == "h2o") {
                rxn.h2o = true;
            } else if (tok.rfind("k0=", 0) == 0) {
                try {
                    rxn.k0 = std::stod(tok.substr(3));
                } catch (const std::exception&) {
                    throw ParseError(line_no, "bad rate '" + tok + "'");
                }
                have_k0 = true;
            } else if (tok.rfind("ea=", 0) == 0) {
                try {
                    rxn.ea = std::stod(tok.substr(3));
                } catch (const std::exception&) {
                    throw ParseError(line_no, "bad activation value '" + tok + "'");
                }
            } else {
                throw ParseError(line_no, "unknown reaction parameter '" + tok + "'");
            }
        }
        if (!have_k0) throw ParseError(line_no, "reaction is missing k0");
        if (rxn.k0 < 0.0) throw ParseError(line_no, "negative rate k0");
        mech.reactions.push_back(std::move(rxn));
        reaction_lines.push_back(line_no);
    }

    if (!atom_lines.empty()) {
        std::map<std::string, int> atom_index;
        for (const auto& al : atom_lines) {
            for (const auto& [atom, count] : al.counts) {
                (void)count;
                if (atom_index.find(atom) == atom_index.end()) {
                    const int id = static_cast<int>(mech.atom_names.size());
                    atom_index.emplace(atom, id);
                    mech.atom_names.push_back(atom);
                }
            }
        }
        mech.composition.assign(mech.species.size(),
                                std::vector<int>(mech.atom_names.size(), -1));
        for (const auto& al : atom_lines) {
            const int sp = mech.species_index(al.species);
            if (sp < 0) {
                throw ParseError(al.line, "unknown species '" + al.species +
                                              "' (not used by any reaction)");
            }
            auto& row = mech.composition[static_cast<std::size_t>(sp)];
            std::fill(row.begin(), row.end(), 0);
            for (const auto& [atom, count] : al.counts) {
                row[static_cast<std::size_t>(atom_index[atom])] = count;
            }
        }
        for (std::size_t s = 0; s < mech.species.size(); ++s) {
            if (!mech.composition[s].empty() && mech.composition[s][0] == -1) {
                throw ParseError(atom_lines.front().line,
                                 "species '" + mech.species[s] +
                                     "' has no atoms line but compositions are present");
            }
        }
        // A . (products - reactants) must vanish for every reaction.
        for (std::size_t r = 0; r < mech.reactions.size(); ++r) {
            const auto& rxn = mech.reactions[r];
            for (std::size_t a = 0; a < mech.atom_names.size(); ++a) {
                long net = 0;
                for (const auto& t : rxn.products) {
                    net += static_cast<long>(t.stoich) *
                           mech.composition[static_cast<std::size_t>(t.species)][a];
                }
                for (const auto& t : rxn.reactants) {
                    net -= static_cast<long>(t.stoich) *
                           mech.composition[static_cast<std::size_t>(t.species)][a];
                }
                if (net != 0) {
                    throw ParseError(reaction_lines[r],
                                     "reaction " + std::to_string(r) + " violates " +
                                         mech.atom_names[a] + " atom balance (net " +
                                         std::to_string(net) + ")");
                }
            }
        }
    }
    return mech;
}

Mechanism load_mechanism(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open mechanism file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_mechanism(buf.str());
}

std::vector<double> reaction_rates(const Mechanism& mech, const Environment& env) {
    env.validate();
    std::vector<double> rates(mech.reactions.size());
    for (std::size_t j = 0; j < mech.reactions.size(); ++j) {
        const Reaction& rxn = mech.reactions[j];
        double k = rxn.k0;
        if (rxn.photo) {
            k *= env.radiation / 1000.0;
        } else if (rxn.ea != 0.0) {
            k *= std::exp(-rxn.ea * (1.0 / env.temperature - 1.0 / kReferenceTempK));
        }
        if (rxn.h2o) k *= env.humidity;
        rates[j] = k;
    }
    return rates;
}

void rhs_and_jacobian(const Mechanism& mech, const std::vector<double>& rates,
                      const std::vector<double>& conc, std::vector<double>& dcdt,
                      std::vector<double>& jac) {
    const std::size_t n = mech.n_species();
    if (conc.size() != n || rates.size() != mech.reactions.size()) {
        throw DimensionError("rhs_and_jacobian: state/rate sizes do not match mechanism");
    }
    dcdt.assign(n, 0.0);
    jac.assign(n * n, 0.0);
    for (std::size_t j = 0; j < mech.reactions.size(); ++j) {
        const Reaction& rxn = mech.reactions[j];
        double flux = rates[j];
        for (const auto& t : rxn.reactants) {
            flux *= int_pow(conc[static_cast<std::size_t>(t.species)], t.stoich);
        }
        for (const auto& t : rxn.reactants) dcdt[static_cast<std::size_t>(t.species)] -= t.stoich * flux;
        for (const auto& t : rxn.products) dcdt[static_cast<std::size_t>(t.species)] += t.stoich * flux;

        // d flux / d c_m for each reactant m
        for (const auto& m : rxn.reactants) {
            double dflux = rates[j] * m.stoich *
                           int_pow(conc[static_cast<std::size_t>(m.species)], m.stoich - 1);
            for (const auto& r : rxn.reactants) {
                if (r.species != m.species) {
                    dflux *= int_pow(conc[static_cast<std::size_t>(r.species)], r.stoich);
                }
            }
            for (const auto& t : rxn.reactants) {
                jac[static_cast<std::size_t>(t.species) * n +
                    static_cast<std::size_t>(m.species)] -= t.stoich * dflux;
            }
            for (const auto& t : rxn.products) {
                jac[static_cast<std::size_t>(t.species) * n +
                    static_cast<std::size_t>(m.species)] += t.stoich * dflux;
            }
        }
    }
}

std::vector<double> integrate_fixed(const Mechanism& mech, const Environment& env,
                                    const std::vector<double>& c0, double t_end,
                                    std::size_t n_outputs, std::size_t n_substeps,
                                    const IntegrateOptions& opts) {
    const std::size_t n = mech.n_species();
    if (c0.size() != n) throw DimensionError("integrate: state size does not match mechanism");
    for (const double v : c0) {
        if (v < 0.0) throw ContractError("integrate: negative initial concentration");
    }
    if (!(t_end > 0.0) || n_outputs == 0) {
        throw ContractError("integrate: t_end must be positive and n_outputs >= 1");
    }

    const std::size_t per_output = (n_substeps + n_outputs - 1) / n_outputs;
    const std::size_t steps = per_output * n_outputs;
    const double h = t_end / static_cast<double>(steps);
    const auto rates = reaction_rates(mech, env);

    std::vector<double> c = c0;
    std::vector<double> x(n), f(n), jac(n * n), m(n * n), rhs(n);
    std::vector<double> out(n_outputs * n);
    std::size_t clipped_steps = 0;

    for (std::size_t step = 0; step < steps; ++step) {
        x = c;
        bool converged = false;
        bool clipped_here = false;
        for (int it = 0; it < opts.max_newton_iters; ++it) {
            rhs_and_jacobian(mech, rates, x, f, jac);
            // (I - h J) delta = -(x - c - h f)
            for (std::size_t i = 0; i < n * n; ++i) m[i] = -h * jac[i];
            for (std::size_t i = 0; i < n; ++i) m[i * n + i] += 1.0;
            for (std::size_t i = 0; i < n; ++i) rhs[i] = -(x[i] - c[i] - h * f[i]);
            if (!lu_solve(m, rhs, n)) {
                throw IntegrationError(opts.sample_id, "singular Newton matrix");
            }
            double delta_max = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                x[i] += rhs[i];
                if (x[i] < 0.0) {
                    x[i] = 0.0;
                    clipped_here = true;
                }
                delta_max = std::max(delta_max, std::abs(rhs[i]));
            }
            if (delta_max < opts.newton_tol) {
                converged = true;
                break;
            }
        }
        if (!converged) {
            throw IntegrationError(opts.sample_id,
                                   "Newton failed to converge at t = " +
                                       std::to_string(h * static_cast<double>(step + 1)));
        }
        if (clipped_here) ++clipped_steps;
        c = x;
        if ((step + 1) % per_output == 0) {
            const std::size_t k = (step + 1) / per_output - 1;
            std::copy(c.begin(), c.end(), out.begin() + static_cast<long>(k * n));
        }
    }
    if (static_cast<double>(clipped_steps) >
        opts.clip_fail_fraction * static_cast<double>(steps)) {
        throw IntegrationError(opts.sample_id,
                               "negative-concentration clipping exceeded " +
                                   std::to_string(100.0 * opts.clip_fail_fraction) +
                                   "% of steps");
    }
    return out;
}

std::vector<double> integrate(const Mechanism& mech, const Environment& env,
                              const std::vector<double>& c0, double t_end,
                              std::size_t n_outputs, const IntegrateOptions& opts) {
    // Backward Euler is first order, so raw pointwise agreement at 1e-6
    // between doubled levels would need ~1e6 substeps. Each pair of levels
    // is therefore combined into its Richardson extrapolant (second order),
    // and the ladder stops when successive extrapolants agree.
    const std::size_t n = mech.n_species();
    std::vector<double> prev_be, prev_extrap;
    bool have_be = false, have_extrap = false;
    for (std::size_t subs = n_outputs; subs <= opts.max_substeps; subs *= 2) {
        std::vector<double> fine;
        try {
            fine = integrate_fixed(mech, env, c0, t_end, n_outputs, subs, opts);
        } catch (const IntegrationError&) {
            if (subs * 2 > opts.max_substeps) throw;
            have_be = have_extrap = false;  // failed level: restart the ladder
            continue;
        }
        if (have_be) {
            std::vector<double> extrap(fine.size());
            for (std::size_t i = 0; i < fine.size(); ++i) {
                extrap[i] = std::max(0.0, 2.0 * fine[i] - prev_be[i]);
            }
            if (have_extrap) {
                double global_max = 1.0;
                for (const double v : extrap) global_max = std::max(global_max, std::abs(v));
                std::vector<double> species_range(n, 0.0);
                for (std::size_t k = 0; k < n_outputs; ++k) {
                    for (std::size_t s = 0; s < n; ++s) {
                        species_range[s] =
                            std::max(species_range[s], std::abs(extrap[k * n + s]));
                    }
                }
                bool agree = true;
                for (std::size_t k = 0; k < n_outputs && agree; ++k) {
                    for (std::size_t s = 0; s < n; ++s) {
                        const double tol = opts.refine_rel * species_range[s] +
                                           1e-12 * global_max;
                        if (std::abs(extrap[k * n + s] - prev_extrap[k * n + s]) > tol) {
                            agree = false;
                            break;
                        }
                    }
                }
                if (agree) return extrap;
            }
            prev_extrap = std::move(extrap);
            have_extrap = true;
        }
        prev_be = std::move(fine);
        have_be = true;
    }
    throw IntegrationError(opts.sample_id,
                           "no substep agreement within the cap of " +
                               std::to_string(opts.max_substeps) + " substeps");
}

}  // namespace chemnne
