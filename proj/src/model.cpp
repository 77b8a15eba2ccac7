#include "drccots/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <unordered_map>

#include "drccots/errors.hpp"

namespace drccots {

Affine& Affine::add(int var, double coef) {
    if (coef != 0.0) terms.push_back({var, coef});
    return *this;
}

Affine& Affine::add(const Affine& other, double scale) {
    for (const auto& t : other.terms) add(t.var, t.coef * scale);
    constant += other.constant * scale;
    return *this;
}

namespace {

void merge_terms(std::vector<Term>& terms) {
    std::stable_sort(terms.begin(), terms.end(), [](const Term& a, const Term& b) { return a.var < b.var; });
    std::vector<Term> merged;
    merged.reserve(terms.size());
    for (const auto& t : terms) {
        if (!merged.empty() && merged.back().var == t.var) {
            merged.back().coef += t.coef;
        } else {
            merged.push_back(t);
        }
    }
    merged.erase(std::remove_if(merged.begin(), merged.end(), [](const Term& t) { return t.coef == 0.0; }),
                 merged.end());
    terms.swap(merged);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void Affine::normalize() { merge_terms(terms); }

double Affine::value(const std::vector<double>& x) const {
    double v = constant;
    for (const auto& t : terms) v += t.coef * x[t.var];
    return v;
}

int MilpModel::add_var(const std::string& name, VarKind kind, double lb, double ub, double cost) {
    if (lb > ub) fail(ErrorKind::InfeasibleBounds, "variable " + name + " has lb > ub");
    vars.push_back({name, kind, lb, ub});
    obj.push_back(cost);
    return num_vars() - 1;
}

int MilpModel::add_con(const std::string& name, std::vector<Term> terms, Sense sense, double rhs) {
    merge_terms(terms);
    for (const auto& t : terms) {
        if (t.var < 0 || t.var >= num_vars()) fail(ErrorKind::InvalidArgument, "constraint " + name + " references unknown variable");
    }
    cons.push_back({name, std::move(terms), sense, rhs});
    return num_cons() - 1;
}

int MilpModel::add_con(const std::string& name, const Affine& lhs, Sense sense, double rhs) {
    return add_con(name, lhs.terms, sense, rhs - lhs.constant);
}

Affine MilpModel::fold_fixed(const Affine& e) const {
    Affine out(e.constant);
    for (const auto& t : e.terms) {
        const auto& v = vars[t.var];
        if (v.lb == v.ub) {
            out.constant += t.coef * v.lb;
        } else {
            out.add(t.var, t.coef);
        }
    }
    out.normalize();
    return out;
}

double MilpModel::max_over_bounds(const Affine& e) const {
    double v = e.constant;
    for (const auto& t : e.terms) v += t.coef * (t.coef > 0 ? vars[t.var].ub : vars[t.var].lb);
    return v;
}

double MilpModel::min_over_bounds(const Affine& e) const {
    double v = e.constant;
    for (const auto& t : e.terms) v += t.coef * (t.coef > 0 ? vars[t.var].lb : vars[t.var].ub);
    return v;
}

double MilpModel::objective_value(const std::vector<double>& x) const {
    double v = obj_offset;
    for (int j = 0; j < num_vars(); ++j) v += obj[j] * x[j];
    return v;
}

double MilpModel::max_violation(const std::vector<double>& x) const {
    double worst = 0.0;
    for (int j = 0; j < num_vars(); ++j) {
        worst = std::max({worst, vars[j].lb - x[j], x[j] - vars[j].ub});
    }
    for (const auto& c : cons) {
        double a = 0.0;
        for (const auto& t : c.terms) a += t.coef * x[t.var];
        switch (c.sense) {
            case Sense::Le: worst = std::max(worst, a - c.rhs); break;
            case Sense::Ge: worst = std::max(worst, c.rhs - a); break;
            case Sense::Eq: worst = std::max(worst, std::abs(a - c.rhs)); break;
        }
    }
    return worst;
}

std::vector<int> MilpModel::binaries() const {
    std::vector<int> out;
    for (int j = 0; j < num_vars(); ++j) {
        if (vars[j].kind == VarKind::Binary) out.push_back(j);
    }
    return out;
}

void MilpModel::validate() const {
    if (obj.size() != vars.size()) fail(ErrorKind::InvalidArgument, "objective length differs from variable count");
    for (const auto& v : vars) {
        if (!std::isfinite(v.lb) || !std::isfinite(v.ub)) {
            fail(ErrorKind::InvalidArgument, "variable " + v.name + " has an infinite bound");
        }
        if (v.lb > v.ub) fail(ErrorKind::InfeasibleBounds, "variable " + v.name + " has lb > ub");
        if (v.kind == VarKind::Binary && (v.lb < 0.0 || v.ub > 1.0)) {
            fail(ErrorKind::InvalidArgument, "binary " + v.name + " has bounds outside [0,1]");
        }
    }
    for (const auto& c : cons) {
        for (const auto& t : c.terms) {
            if (t.var < 0 || t.var >= num_vars() || !std::isfinite(t.coef)) {
                fail(ErrorKind::InvalidArgument, "constraint " + c.name + " has an invalid term");
            }
        }
    }
}

// Grammar:
//   minimize
//    obj: [+|-] coef var ... [+|-] constant
//   subject to
//    name: [+|-] coef var ... (<=|=|>=) rhs
//   bounds
//    lb <= var <= ub
//   binary
//    var ...
//   end
std::string MilpModel::to_lp() const {
    std::ostringstream out;
    out << "\\ method " << (meta.method.empty() ? "-" : meta.method) << " eps " << fmt(meta.eps) << " lines_out "
        << meta.lines_out << "\n";
    auto write_terms = [&](const std::vector<Term>& terms) {
        for (const auto& t : terms) {
            out << ' ' << (t.coef < 0 ? '-' : '+') << ' ' << fmt(std::abs(t.coef)) << ' ' << vars[t.var].name;
        }
    };
    out << "minimize\n obj:";
    std::vector<Term> objective;
    for (int j = 0; j < num_vars(); ++j) {
        if (obj[j] != 0.0) objective.push_back({j, obj[j]});
    }
    write_terms(objective);
    if (obj_offset != 0.0 || objective.empty()) {
        out << ' ' << (obj_offset < 0 ? '-' : '+') << ' ' << fmt(std::abs(obj_offset));
    }
    out << "\nsubject to\n";
    for (const auto& c : cons) {
        out << ' ' << c.name << ':';
        write_terms(c.terms);
        if (c.terms.empty()) out << " + 0 " << vars.front().name;
        out << (c.sense == Sense::Le ? " <= " : c.sense == Sense::Ge ? " >= " : " = ") << fmt(c.rhs) << '\n';
    }
    out << "bounds\n";
    for (const auto& v : vars) out << ' ' << fmt(v.lb) << " <= " << v.name << " <= " << fmt(v.ub) << '\n';
    out << "binary\n";
    for (const auto& v : vars) {
        if (v.kind == VarKind::Binary) out << ' ' << v.name << '\n';
    }
    out << "end\n";
    return out.str();
}

MilpModel MilpModel::from_lp(const std::string& text) {
    MilpModel model;
    std::unordered_map<std::string, int> index;
    enum class Section { None, Objective, Constraints, Bounds, Binary, End } section = Section::None;

    struct PendingRow {
        std::string name;
        std::vector<std::pair<std::string, double>> terms;
        double constant = 0.0;
        Sense sense = Sense::Le;
        double rhs = 0.0;
    };
    std::vector<PendingRow> rows;
    PendingRow objective;
    std::map<std::string, std::pair<double, double>> bounds;
    std::vector<std::string> binaries;
    std::vector<std::string> order;

    auto note_var = [&](const std::string& name) {
        if (!index.count(name)) {
            index[name] = static_cast<int>(order.size());
            order.push_back(name);
        }
    };
    auto parse_number = [](const std::string& tok) {
        try {
            std::size_t used = 0;
            double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            return v;
        } catch (const std::exception&) {
            fail(ErrorKind::MalformedDocument, "expected a number, got '" + tok + "'");
        }
    };
    auto parse_row = [&](const std::vector<std::string>& tok, std::size_t pos, PendingRow& row, bool with_sense) {
        while (pos < tok.size()) {
            const std::string& s = tok[pos];
            if (with_sense && (s == "<=" || s == ">=" || s == "=")) {
                row.sense = s == "<=" ? Sense::Le : s == ">=" ? Sense::Ge : Sense::Eq;
                if (pos + 1 >= tok.size()) fail(ErrorKind::MalformedDocument, "missing right-hand side");
                row.rhs = parse_number(tok[pos + 1]);
                return;
            }
            if (s != "+" && s != "-") fail(ErrorKind::MalformedDocument, "expected sign, got '" + s + "'");
            if (pos + 1 >= tok.size()) fail(ErrorKind::MalformedDocument, "dangling sign");
            double coef = parse_number(tok[pos + 1]) * (s == "-" ? -1.0 : 1.0);
            std::size_t next = pos + 2;
            bool has_var = next < tok.size() && tok[next] != "+" && tok[next] != "-" && tok[next] != "<=" &&
                           tok[next] != ">=" && tok[next] != "=";
            if (has_var) {
                note_var(tok[next]);
                row.terms.emplace_back(tok[next], coef);
                pos = next + 1;
            } else {
                row.constant += coef;
                pos = next;
            }
        }
        if (with_sense) fail(ErrorKind::MalformedDocument, "constraint " + row.name + " lacks a sense");
    };

    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '\\') {
            std::istringstream ms(line.substr(1));
            std::string k1, method, k2, eps, k3;
            int lines_out = 0;
            if (ms >> k1 >> method >> k2 >> eps >> k3 >> lines_out && k1 == "method" && k2 == "eps" && k3 == "lines_out") {
                model.meta = {method == "-" ? std::string() : method, parse_number(eps), lines_out};
            }
            continue;
        }
        std::istringstream ls(line);
        std::vector<std::string> tok;
        std::string t;
        while (ls >> t) tok.push_back(t);
        if (tok.empty()) continue;
        if (tok[0] == "minimize") { section = Section::Objective; continue; }
        if (tok[0] == "subject" && tok.size() > 1 && tok[1] == "to") { section = Section::Constraints; continue; }
        if (tok[0] == "bounds") { section = Section::Bounds; continue; }
        if (tok[0] == "binary") { section = Section::Binary; continue; }
        if (tok[0] == "end") { section = Section::End; continue; }
        switch (section) {
            case Section::Objective: {
                if (tok[0] != "obj:") fail(ErrorKind::MalformedDocument, "objective must start with 'obj:'");
                parse_row(tok, 1, objective, false);
                break;
            }
            case Section::Constraints: {
                if (tok[0].back() != ':') fail(ErrorKind::MalformedDocument, "constraint lacks a name");
                PendingRow row;
                row.name = tok[0].substr(0, tok[0].size() - 1);
                parse_row(tok, 1, row, true);
                rows.push_back(std::move(row));
                break;
            }
            case Section::Bounds: {
                if (tok.size() != 5 || tok[1] != "<=" || tok[3] != "<=") {
                    fail(ErrorKind::MalformedDocument, "bounds line must read 'lb <= var <= ub'");
                }
                note_var(tok[2]);
                bounds[tok[2]] = {parse_number(tok[0]), parse_number(tok[4])};
                break;
            }
            case Section::Binary: {
                for (const auto& name : tok) {
                    note_var(name);
                    binaries.push_back(name);
                }
                break;
            }
            default: fail(ErrorKind::MalformedDocument, "content outside a section");
        }
    }
    if (section != Section::End) fail(ErrorKind::MalformedDocument, "missing 'end'");

    // Variable order follows the bounds section, which lists every variable.
    std::vector<std::string> final_order;
    std::vector<std::string> bound_order;
    {
        std::istringstream again(text);
        bool in_bounds = false;
        while (std::getline(again, line)) {
            std::istringstream ls(line);
            std::string first, op, name;
            if (!(ls >> first)) continue;
            if (first == "bounds") { in_bounds = true; continue; }
            if (first == "binary" || first == "end") in_bounds = false;
            if (in_bounds && ls >> op >> name) bound_order.push_back(name);
        }
    }
    std::map<std::string, bool> placed;
    for (const auto& name : bound_order) {
        if (!placed[name]) { final_order.push_back(name); placed[name] = true; }
    }
    for (const auto& name : order) {
        if (!placed[name]) { final_order.push_back(name); placed[name] = true; }
    }
    index.clear();
    for (std::size_t i = 0; i < final_order.size(); ++i) index[final_order[i]] = static_cast<int>(i);
    for (const auto& name : final_order) {
        auto it = bounds.find(name);
        double lb = it == bounds.end() ? 0.0 : it->second.first;
        double ub = it == bounds.end() ? kInf : it->second.second;
        model.add_var(name, VarKind::Continuous, lb, ub);
    }
    for (const auto& name : binaries) model.vars[index[name]].kind = VarKind::Binary;
    for (const auto& [name, coef] : objective.terms) model.obj[index[name]] += coef;
    model.obj_offset = objective.constant;
    for (const auto& row : rows) {
        std::vector<Term> terms;
        for (const auto& [name, coef] : row.terms) terms.push_back({index[name], coef});
        model.add_con(row.name, std::move(terms), row.sense, row.rhs - row.constant);
    }
    return model;
}

}  // namespace drccots
