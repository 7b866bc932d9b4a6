#pragma once

// Cohort guidance: knowledge-level similarity constraints l_k and the
// patient-level contrastive loss l_p over a FIFO cohort bank.

#include <ccl/cohort.hpp>
#include <ccl/mkd.hpp>
#include <ccl/tensor.hpp>

#include <array>
#include <deque>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ccl {

enum class ComponentType { Genomic = 0, Pathology = 1, Common = 2, Synergistic = 3 };
inline constexpr std::size_t kComponentTypes = 4;

inline const char* component_letter(ComponentType t) {
    switch (t) {
        case ComponentType::Genomic:
            return "G";
        case ComponentType::Pathology:
            return "P";
        case ComponentType::Common:
            return "C";
        case ComponentType::Synergistic:
            return "S";
    }
    return "?";
}

// Which component's term group participates in l_k.
struct ConstraintSet {
    bool genomic = true;
    bool pathology = true;
    bool common = true;
    bool synergistic = true;

    static ConstraintSet parse(const std::string& letters) {
        ConstraintSet s{false, false, false, false};
        for (char ch : letters) {
            switch (ch) {
                case 'G':
                case 'g':
                    s.genomic = true;
                    break;
                case 'P':
                case 'p':
                    s.pathology = true;
                    break;
                case 'C':
                case 'c':
                    s.common = true;
                    break;
                case 'S':
                case 's':
                    s.synergistic = true;
                    break;
                case '+':
                    break;
                default:
                    throw ConfigError(std::string("constraint subset: unknown component '") + ch + "'");
            }
        }
        return s;
    }

    std::string to_string() const {
        std::string s;
        if (genomic) s += 'G';
        if (pathology) s += 'P';
        if (common) s += 'C';
        if (synergistic) s += 'S';
        return s;
    }

    bool operator==(const ConstraintSet&) const = default;
};

// l_k = |cos(G,F_p)| - cos(G,F_g) - cos(P,F_p) + |cos(P,F_g)|
//       - cos(C,F_p) - cos(C,F_g) + |cos(S,F_p)| + |cos(S,F_g)|
// F_g and F_p enter detached. Absent or disabled components drop their terms.
inline Tensor knowledge_loss(const Tensor& f_g, const Tensor& f_p, const Tensor* g, const Tensor* p, const Tensor* c,
                             const Tensor* s, ConstraintSet constraints = {}) {
    const Tensor fg = f_g.detach();
    const Tensor fp = f_p.detach();
    std::vector<Tensor> terms;
    if (g && constraints.genomic) {
        terms.push_back(abs(cosine_similarity(*g, fp)));
        terms.push_back(-cosine_similarity(*g, fg));
    }
    if (p && constraints.pathology) {
        terms.push_back(-cosine_similarity(*p, fp));
        terms.push_back(abs(cosine_similarity(*p, fg)));
    }
    if (c && constraints.common) {
        terms.push_back(-cosine_similarity(*c, fp));
        terms.push_back(-cosine_similarity(*c, fg));
    }
    if (s && constraints.synergistic) {
        terms.push_back(abs(cosine_similarity(*s, fp)));
        terms.push_back(abs(cosine_similarity(*s, fg)));
    }
    if (terms.empty()) return Tensor::scalar(0.0);
    Tensor total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    return total;
}

inline Tensor knowledge_loss(const KnowledgeComponents& k, ConstraintSet constraints = {}) {
    return knowledge_loss(k.F_g, k.F_p, &k.G, &k.P, k.C ? &*k.C : nullptr, k.S ? &*k.S : nullptr, constraints);
}

struct BankEntry {
    Eigen::RowVectorXd value;
    int group = 0;
    long iteration = 0;
};

struct BankPartition {
    Matrix positives;  // one entry per row
    Matrix negatives;
};

// Per component type, a FIFO of detached vectors tagged with risk group and
// iteration. After a push at iteration t only iterations t-b+1..t remain.
class CohortBank {
   public:
    explicit CohortBank(int capacity_iterations = 10) : capacity_(capacity_iterations) {
        if (capacity_ < 1) throw ConfigError("cohort bank: capacity b must be >= 1");
    }

    int capacity() const { return capacity_; }

    void push(ComponentType type, const Matrix& value, int group, long iteration) {
        if (value.rows() != 1) throw DimensionError("cohort bank: entries must be row vectors, got " + shape_str(value));
        auto& q = queues_[static_cast<std::size_t>(type)];
        q.push_back({value.row(0), group, iteration});
        while (!q.empty() && q.front().iteration <= iteration - capacity_) q.pop_front();
    }

    void push(const std::vector<std::pair<ComponentType, Tensor>>& components, int group, long iteration) {
        for (const auto& [type, t] : components) push(type, t.value(), group, iteration);
    }

    const std::deque<BankEntry>& entries(ComponentType type) const { return queues_[static_cast<std::size_t>(type)]; }

    std::size_t size(ComponentType type) const { return entries(type).size(); }

    std::size_t iteration_batches(ComponentType type) const {
        std::set<long> its;
        for (const auto& e : entries(type)) its.insert(e.iteration);
        return its.size();
    }

    void clear() {
        for (auto& q : queues_) q.clear();
    }

    // Uncensored query: positives share its group. Censored query: positives
    // are in its group or any lower-risk (larger index) group.
    BankPartition partition(ComponentType type, int query_group, int query_censor) const {
        const auto& q = entries(type);
        std::vector<const BankEntry*> pos, neg;
        for (const auto& e : q) {
            const bool positive = query_censor == 0 ? e.group == query_group : e.group >= query_group;
            (positive ? pos : neg).push_back(&e);
        }
        auto stack = [](const std::vector<const BankEntry*>& rows) {
            if (rows.empty()) return Matrix(0, 0);
            Matrix m(static_cast<Index>(rows.size()), rows.front()->value.size());
            for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Index>(i)) = rows[i]->value;
            return m;
        };
        return {stack(pos), stack(neg)};
    }

   private:
    int capacity_;
    std::array<std::deque<BankEntry>, kComponentTypes> queues_;
};

// l_p = -log( sum_+ d / (sum_+ d + sum_- d) ), d(x, y) = exp(cos(x, y) / temperature).
// Zero when either set is empty.
inline Tensor patient_loss(const Tensor& query, const Matrix& positives, const Matrix& negatives, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("patient_loss: temperature must be > 0");
    if (positives.rows() == 0 || negatives.rows() == 0) return Tensor::scalar(0.0);
    const Tensor s_pos = scale(cosine_rows(query, positives), 1.0 / temperature);
    const Tensor s_neg = scale(cosine_rows(query, negatives), 1.0 / temperature);
    // Constant shift keeps exp in range; the ratio is unchanged.
    const double shift = std::max(s_pos.value().maxCoeff(), s_neg.value().maxCoeff());
    const Tensor mass_pos = sum(exp(s_pos + (-shift)));
    const Tensor mass_neg = sum(exp(s_neg + (-shift)));
    return sub(log(add(mass_pos, mass_neg)), log(mass_pos));
}

inline std::vector<std::pair<ComponentType, Tensor>> bank_components(const KnowledgeComponents& k) {
    std::vector<std::pair<ComponentType, Tensor>> out{{ComponentType::Genomic, k.G}, {ComponentType::Pathology, k.P}};
    if (k.C) out.emplace_back(ComponentType::Common, *k.C);
    if (k.S) out.emplace_back(ComponentType::Synergistic, *k.S);
    return out;
}

// Mean over the given component types of their patient-level losses.
inline Tensor patient_level_loss(const std::vector<std::pair<ComponentType, Tensor>>& queries, const CohortBank& bank,
                                 int group, int censor, double temperature) {
    if (queries.empty()) return Tensor::scalar(0.0);
    std::vector<Tensor> losses;
    for (const auto& [type, q] : queries) {
        const auto part = bank.partition(type, group, censor);
        losses.push_back(patient_loss(q, part.positives, part.negatives, temperature));
    }
    Tensor total = losses.front();
    for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
    return scale(total, 1.0 / static_cast<double>(losses.size()));
}

struct CohortLoss {
    Tensor knowledge;  // l_k
    Tensor patient;    // l_p
    Tensor total;      // l_k + l_p
};

inline CohortLoss cohort_loss(const KnowledgeComponents& k, const CohortBank& bank, int group, int censor,
                              double temperature, ConstraintSet constraints = {}) {
    CohortLoss out;
    out.knowledge = knowledge_loss(k, constraints);
    out.patient = patient_level_loss(bank_components(k), bank, group, censor, temperature);
    out.total = add(out.knowledge, out.patient);
    return out;
}

}  // namespace ccl
