#include "orthoct/losses.hpp"

#include "orthoct/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace orthoct {

void ContrastiveConfig::validate() const
{
    const int window = (2 * window_radius + 1) * (2 * window_radius + 1) - 1;
    if (window_radius < 1)
        throw std::invalid_argument("ContrastiveConfig: window_radius must be >= 1");
    if (n_pos_s < 1 || n_pos_s > window)
        throw std::invalid_argument("ContrastiveConfig: n_pos_s must be in [1, "
            + std::to_string(window) + "]");
    if (n_neg_a < 1 || n_neg_a > window)
        throw std::invalid_argument("ContrastiveConfig: n_neg_a must be in [1, "
            + std::to_string(window) + "]");
    if (!(tau > 0.0))
        throw std::invalid_argument("ContrastiveConfig: tau must be > 0");
    if (anchors_per_image < 1)
        throw std::invalid_argument("ContrastiveConfig: anchors_per_image must be >= 1");
    if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0))
        throw std::invalid_argument("ContrastiveConfig: ema_momentum must be in [0,1]");
}

void LossWeights::validate() const
{
    for (double w : {w_l1, w_perc, w_adv, w_contrast, w_semantic_vs_anatomy})
        if (!(std::isfinite(w) && w >= 0.0))
            throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
    if (w_semantic_vs_anatomy > 1.0)
        throw std::invalid_argument("LossWeights: w_semantic_vs_anatomy must be in [0,1]");
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target)
{
    if (pred.shape() != target.shape())
        throw std::invalid_argument("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs "
            + shape_str(target.shape()));
    Tensor<T> d = sub(pred, target);
    return mean(mul(d, d));
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target)
{
    if (pred.shape() != target.shape())
        throw std::invalid_argument("l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs "
            + shape_str(target.shape()));
    return mean(abs(sub(pred, target)));
}

template <typename T>
Tensor<T> perceptual_loss(const ParamSet<T>& extractor, const UNetConfig& extractor_cfg,
    const Tensor<T>& pred, const Tensor<T>& target)
{
    if (pred.shape() != target.shape())
        throw std::invalid_argument("perceptual_loss: shape mismatch");
    for (const auto& [name, t] : extractor.entries())
        if (t.requires_grad())
            throw std::invalid_argument("perceptual_loss: extractor must be frozen, parameter "
                + name + " requires grad");
    auto fp = encoder_features(extractor, extractor_cfg, pred);
    auto ft = encoder_features(extractor, extractor_cfg, target);
    Tensor<T> total;
    for (size_t i = 0; i < fp.size(); ++i) {
        Tensor<T> lvl = mse_loss(fp[i], ft[i]);
        total = total.defined() ? add(total, lvl) : lvl;
    }
    return total;
}

template <typename T>
Tensor<T> lsgan_d_loss(const Tensor<T>& disc_real, const Tensor<T>& disc_fake)
{
    Tensor<T> r = offset(disc_real, T(-1));
    Tensor<T> real_term = mean(mul(r, r));
    Tensor<T> fake_term = mean(mul(disc_fake, disc_fake));
    return scale(add(real_term, fake_term), T(0.5));
}

template <typename T>
Tensor<T> lsgan_g_loss(const Tensor<T>& disc_fake)
{
    Tensor<T> f = offset(disc_fake, T(-1));
    return mean(mul(f, f));
}

template <typename T>
AdversarialPair<T> adversarial_losses(const Tensor<T>& disc_real, const Tensor<T>& disc_fake)
{
    return {lsgan_d_loss(disc_real, disc_fake), lsgan_g_loss(disc_fake)};
}

namespace {

template <typename T>
struct MapView {
    const T* v;
    int d, h, w;
    int64_t plane; // h*w

    static MapView of(const Tensor<T>& fmap)
    {
        const Shape& s = fmap.shape();
        if (s.size() != 3)
            throw std::invalid_argument("feature map must be [D,H,W], got " + shape_str(s));
        return {fmap.values().data(), s[0], s[1], s[2], int64_t(s[1]) * s[2]};
    }
    int64_t flat(GridPos p) const { return int64_t(p.r) * w + p.c; }
    void check(GridPos p, const char* what) const
    {
        if (p.r < 0 || p.r >= h || p.c < 0 || p.c >= w)
            throw std::invalid_argument(std::string(what) + ": anchor (" + std::to_string(p.r) + ","
                + std::to_string(p.c) + ") outside " + std::to_string(h) + "x" + std::to_string(w));
    }
    T dot(GridPos a, GridPos b) const
    {
        const int64_t ia = flat(a), ib = flat(b);
        T acc = 0;
        for (int ch = 0; ch < d; ++ch)
            acc += v[ch * plane + ia] * v[ch * plane + ib];
        return acc;
    }
};

template <typename T>
void check_congruent(const Tensor<T>& a, const Tensor<T>& b, const char* what)
{
    if (!a.defined() || !b.defined() || a.shape() != b.shape())
        throw std::invalid_argument(std::string(what) + ": student/teacher feature maps not congruent");
}

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
Tensor<T> make_scalar_op(T value, NodePtr<T> parent, std::function<void(detail::Node<T>*)> back)
{
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = {1};
    n->value = {value};
    n->is_leaf = false;
    if (parent->requires_grad) {
        n->requires_grad = true;
        n->grad.assign(1, T(0));
        n->parents = {parent};
        detail::Node<T>* raw = n.get();
        n->backprop = [raw, fn = std::move(back)]() { fn(raw); };
    }
    return Tensor<T>::wrap(std::move(n));
}

} // namespace

template <typename T>
std::vector<GridPos> select_neighbors(const Tensor<T>& fmap, GridPos anchor, int n, int radius)
{
    if (n < 0)
        throw std::invalid_argument("select_neighbors: n must be >= 0");
    if (radius < 1)
        throw std::invalid_argument("select_neighbors: radius must be >= 1");
    const auto m = MapView<T>::of(fmap);
    m.check(anchor, "select_neighbors");

    std::vector<T> anchor_vec(static_cast<size_t>(m.d));
    for (int ch = 0; ch < m.d; ++ch)
        anchor_vec[ch] = m.v[ch * m.plane + m.flat(anchor)];

    struct Cand {
        T sim;
        int64_t idx;
        GridPos pos;
    };
    std::vector<Cand> cands;
    std::vector<T> vec(static_cast<size_t>(m.d));
    for (int r = std::max(0, anchor.r - radius); r <= std::min(m.h - 1, anchor.r + radius); ++r)
        for (int c = std::max(0, anchor.c - radius); c <= std::min(m.w - 1, anchor.c + radius); ++c) {
            if (r == anchor.r && c == anchor.c)
                continue;
            const GridPos p{r, c};
            for (int ch = 0; ch < m.d; ++ch)
                vec[ch] = m.v[ch * m.plane + m.flat(p)];
            cands.push_back({cosine_similarity<T>(anchor_vec, vec, T(1e-12)), m.flat(p), p});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.sim != b.sim)
            return a.sim > b.sim;
        return a.idx < b.idx;
    });
    const size_t take = std::min(static_cast<size_t>(n), cands.size());
    std::vector<GridPos> out(take);
    for (size_t i = 0; i < take; ++i)
        out[i] = cands[i].pos;
    return out;
}

template <typename T>
Tensor<T> semantic_loss(const FeatureBundleT<T>& student, const FeatureBundleT<T>& teacher,
    std::span<const GridPos> anchors, const ContrastiveConfig& cfg)
{
    cfg.validate();
    check_congruent(student.semantic, teacher.semantic, "semantic_loss");
    if (teacher.semantic.requires_grad())
        throw std::invalid_argument("semantic_loss: teacher features must be detached");
    if (anchors.empty())
        throw std::invalid_argument("semantic_loss: anchor list is empty");

    const auto tm = MapView<T>::of(teacher.semantic);
    const auto sm = MapView<T>::of(student.semantic);
    // positions selected on the teacher map, the stable target
    std::vector<int64_t> pairs;
    for (const GridPos& a : anchors) {
        tm.check(a, "semantic_loss");
        pairs.push_back(tm.flat(a));
        for (const GridPos& p : select_neighbors(teacher.semantic, a, cfg.n_pos_s, cfg.window_radius))
            pairs.push_back(tm.flat(p));
    }
    const T inv = T(1) / static_cast<T>(pairs.size());
    T total = 0;
    for (int64_t idx : pairs)
        for (int ch = 0; ch < sm.d; ++ch) {
            const T diff = sm.v[ch * sm.plane + idx] - tm.v[ch * tm.plane + idx];
            total += diff * diff;
        }
    total *= inv;

    auto ps = student.semantic.handle();
    auto pt = teacher.semantic.handle();
    const int d = sm.d;
    const int64_t plane = sm.plane;
    return make_scalar_op<T>(total, ps,
        [ps, pt, d, plane, inv, pairs = std::move(pairs)](detail::Node<T>* o) {
            const T g = o->grad[0] * inv;
            for (int64_t idx : pairs)
                for (int ch = 0; ch < d; ++ch) {
                    const int64_t k = ch * plane + idx;
                    ps->grad[k] += T(2) * (ps->value[k] - pt->value[k]) * g;
                }
        });
}

template <typename T>
Tensor<T> anatomy_infonce(const FeatureBundleT<T>& student, const FeatureBundleT<T>& teacher,
    std::span<const GridPos> anchors, const ContrastiveConfig& cfg)
{
    cfg.validate();
    check_congruent(student.anatomy, teacher.anatomy, "anatomy_infonce");
    if (teacher.anatomy.requires_grad())
        throw std::invalid_argument("anatomy_infonce: teacher features must be detached");
    if (anchors.empty())
        throw std::invalid_argument("anatomy_infonce: anchor list is empty");

    const auto tm = MapView<T>::of(teacher.anatomy);
    const auto sm = MapView<T>::of(student.anatomy);
    const T inv_tau = static_cast<T>(1.0 / cfg.tau);

    struct AnchorTerm {
        int64_t anchor;                 // flat position
        std::vector<int64_t> negatives; // flat positions on the teacher map
        std::vector<T> probs;           // softmax over {positive, negatives...}
    };
    std::vector<AnchorTerm> terms;
    terms.reserve(anchors.size());
    T total = 0;
    std::vector<T> logits;
    for (const GridPos& a : anchors) {
        tm.check(a, "anatomy_infonce");
        AnchorTerm term;
        term.anchor = tm.flat(a);
        for (const GridPos& p : select_neighbors(teacher.anatomy, a, cfg.n_neg_a, cfg.window_radius))
            term.negatives.push_back(tm.flat(p));

        logits.clear();
        // student anchor vector against teacher anchor (positive) and
        // teacher neighbors (negatives)
        {
            T acc = 0;
            for (int ch = 0; ch < sm.d; ++ch)
                acc += sm.v[ch * sm.plane + term.anchor] * tm.v[ch * tm.plane + term.anchor];
            logits.push_back(acc * inv_tau);
        }
        for (int64_t nidx : term.negatives) {
            T acc = 0;
            for (int ch = 0; ch < sm.d; ++ch)
                acc += sm.v[ch * sm.plane + term.anchor] * tm.v[ch * tm.plane + nidx];
            logits.push_back(acc * inv_tau);
        }
        const T m = *std::max_element(logits.begin(), logits.end());
        T z = 0;
        term.probs.resize(logits.size());
        for (size_t k = 0; k < logits.size(); ++k) {
            term.probs[k] = std::exp(logits[k] - m);
            z += term.probs[k];
        }
        for (T& p : term.probs)
            p /= z;
        total += (m + std::log(z)) - logits[0]; // -log softmax of the positive
        terms.push_back(std::move(term));
    }
    const T inv_n = T(1) / static_cast<T>(anchors.size());
    total *= inv_n;

    auto ps = student.anatomy.handle();
    auto pt = teacher.anatomy.handle();
    const int d = sm.d;
    const int64_t plane = sm.plane;
    return make_scalar_op<T>(total, ps,
        [ps, pt, d, plane, inv_tau, inv_n, terms = std::move(terms)](detail::Node<T>* o) {
            const T g = o->grad[0] * inv_n * inv_tau;
            for (const auto& term : terms) {
                // d/ds_i = [(p+ - 1) t_i + sum_j p_j t_j] / tau
                for (int ch = 0; ch < d; ++ch) {
                    T acc = (term.probs[0] - T(1)) * pt->value[ch * plane + term.anchor];
                    for (size_t j = 0; j < term.negatives.size(); ++j)
                        acc += term.probs[j + 1] * pt->value[ch * plane + term.negatives[j]];
                    ps->grad[ch * plane + term.anchor] += acc * g;
                }
            }
        });
}

template <typename T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, double m)
{
    if (!(m >= 0.0 && m <= 1.0))
        throw std::invalid_argument("ema_update: momentum must be in [0,1]");
    if (teacher.count() != student.count())
        throw std::invalid_argument("ema_update: parameter sets differ in size");
    const T blend = static_cast<T>(1.0 - m);
    auto& te = teacher.entries_mut();
    const auto& se = student.entries();
    for (size_t i = 0; i < te.size(); ++i) {
        if (te[i].first != se[i].first || te[i].second.shape() != se[i].second.shape())
            throw std::invalid_argument("ema_update: mismatch at parameter " + te[i].first);
        auto t = te[i].second.values_mut();
        auto s = se[i].second.values();
        for (size_t k = 0; k < t.size(); ++k)
            t[k] += blend * (s[k] - t[k]);
    }
}

template <typename T>
Tensor<T> hybrid_loss(const Tensor<T>& l1, const Tensor<T>& perc, const Tensor<T>& g_adv,
    const Tensor<T>& semantic, const Tensor<T>& anatomy, const LossWeights& w)
{
    w.validate();
    const std::pair<const char*, const Tensor<T>*> comps[] = {
        {"l1", &l1}, {"perceptual", &perc}, {"adversarial", &g_adv},
        {"semantic", &semantic}, {"anatomy", &anatomy}};
    for (const auto& [name, t] : comps) {
        if (!t->defined() || t->size() != 1)
            throw std::invalid_argument(std::string("hybrid_loss: ") + name + " must be a scalar");
        if (!std::isfinite(static_cast<double>(t->item())))
            throw std::runtime_error(std::string("hybrid_loss: non-finite ") + name + " component");
    }
    Tensor<T> contrast = add(scale(semantic, static_cast<T>(w.w_semantic_vs_anatomy)),
        scale(anatomy, static_cast<T>(1.0 - w.w_semantic_vs_anatomy)));
    Tensor<T> total = scale(l1, static_cast<T>(w.w_l1));
    total = add(total, scale(perc, static_cast<T>(w.w_perc)));
    total = add(total, scale(g_adv, static_cast<T>(w.w_adv)));
    total = add(total, scale(contrast, static_cast<T>(w.w_contrast)));
    return total;
}

std::vector<GridPos> sample_anchors(int h, int w, int count, Rng& rng)
{
    if (h < 1 || w < 1 || count < 1)
        throw std::invalid_argument("sample_anchors: h, w, count must be >= 1");
    const int total = h * w;
    std::vector<GridPos> out;
    if (count >= total) {
        out.reserve(static_cast<size_t>(total));
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                out.push_back({r, c});
        return out;
    }
    std::vector<int> idx(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i)
        idx[static_cast<size_t>(i)] = i;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int j = i + rng.uniform_int(total - i);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        out.push_back({idx[static_cast<size_t>(i)] / w, idx[static_cast<size_t>(i)] % w});
    }
    return out;
}

#define ORTHOCT_LOSSES_IMPL(T)                                                        \
    template Tensor<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);               \
    template Tensor<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&);                \
    template Tensor<T> perceptual_loss<T>(const ParamSet<T>&, const UNetConfig&,      \
        const Tensor<T>&, const Tensor<T>&);                                          \
    template AdversarialPair<T> adversarial_losses<T>(const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> lsgan_d_loss<T>(const Tensor<T>&, const Tensor<T>&);           \
    template Tensor<T> lsgan_g_loss<T>(const Tensor<T>&);                             \
    template std::vector<GridPos> select_neighbors<T>(const Tensor<T>&, GridPos, int, int); \
    template Tensor<T> semantic_loss<T>(const FeatureBundleT<T>&, const FeatureBundleT<T>&, \
        std::span<const GridPos>, const ContrastiveConfig&);                          \
    template Tensor<T> anatomy_infonce<T>(const FeatureBundleT<T>&,                   \
        const FeatureBundleT<T>&, std::span<const GridPos>, const ContrastiveConfig&); \
    template void ema_update<T>(ParamSet<T>&, const ParamSet<T>&, double);            \
    template Tensor<T> hybrid_loss<T>(const Tensor<T>&, const Tensor<T>&,             \
        const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const LossWeights&);

ORTHOCT_LOSSES_IMPL(float)
ORTHOCT_LOSSES_IMPL(double)
#undef ORTHOCT_LOSSES_IMPL

} // namespace orthoct
