#pragma once

#include <limits>
#include <string>
#include <vector>

namespace drccots {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class VarKind { Continuous, Binary };
enum class Sense { Le, Eq, Ge };

struct Term {
    int var = -1;
    double coef = 0.0;
};

// Sparse affine expression sum(coef * var) + constant.
struct Affine {
    std::vector<Term> terms;
    double constant = 0.0;

    Affine() = default;
    explicit Affine(double c) : constant(c) {}

    Affine& add(int var, double coef);
    Affine& add(const Affine& other, double scale = 1.0);
    // Sorts by variable and merges duplicates, dropping exact zeros.
    void normalize();
    bool is_constant() const { return terms.empty(); }
    double value(const std::vector<double>& x) const;
};

struct Variable {
    std::string name;
    VarKind kind = VarKind::Continuous;
    double lb = 0.0;
    double ub = 0.0;
};

struct Constraint {
    std::string name;
    std::vector<Term> terms;
    Sense sense = Sense::Le;
    double rhs = 0.0;
};

struct ModelMeta {
    std::string method;
    double eps = 0.0;
    int lines_out = 0;
};

class MilpModel {
public:
    std::vector<Variable> vars;
    std::vector<Constraint> cons;
    std::vector<double> obj;
    double obj_offset = 0.0;
    ModelMeta meta;

    int num_vars() const { return static_cast<int>(vars.size()); }
    int num_cons() const { return static_cast<int>(cons.size()); }

    int add_var(const std::string& name, VarKind kind, double lb, double ub, double cost = 0.0);
    int add_binary(const std::string& name, double cost = 0.0) { return add_var(name, VarKind::Binary, 0.0, 1.0, cost); }
    int add_con(const std::string& name, std::vector<Term> terms, Sense sense, double rhs);
    // lhs (with its constant moved to the right) `sense` rhs.
    int add_con(const std::string& name, const Affine& lhs, Sense sense, double rhs);

    // Folds fixed variables (lb == ub) of an expression into its constant.
    Affine fold_fixed(const Affine& e) const;
    // Bound-box range of an affine expression.
    double max_over_bounds(const Affine& e) const;
    double min_over_bounds(const Affine& e) const;

    double objective_value(const std::vector<double>& x) const;
    double max_violation(const std::vector<double>& x) const;
    std::vector<int> binaries() const;

    void validate() const;

    std::string to_lp() const;
    static MilpModel from_lp(const std::string& text);
};

}  // namespace drccots
