#include "cil/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "cil/errors.hpp"
#include "cil/rng.hpp"

namespace cil {

namespace {

// y = x * W^T + b, x is B x in, W is out x in.
Tensor affine(const Tensor& x, const DenseLayer& layer) {
    const std::size_t batch = x.rows();
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    Tensor y = Tensor::matrix(batch, out);
    const double* w = layer.weight.value.values.data();
    const double* b = layer.bias.value.values.data();
    for (std::size_t n = 0; n < batch; ++n) {
        const double* xn = x.values.data() + n * in;
        double* yn = y.values.data() + n * out;
        for (std::size_t o = 0; o < out; ++o) {
            const double* wo = w + o * in;
            double acc = b[o];
            for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xn[i];
            yn[o] = acc;
        }
    }
    return y;
}

Tensor relu(const Tensor& z) {
    Tensor a = z;
    for (double& v : a.values)
        if (v < 0.0) v = 0.0;
    return a;
}

} // namespace

Model::Model(int input_dim, const std::vector<int>& hidden_widths, std::uint64_t seed)
    : input_dim_(input_dim) {
    if (input_dim <= 0) throw ConfigError("model input dimension must be positive");
    int in = input_dim;
    for (std::size_t l = 0; l < hidden_widths.size(); ++l) {
        int out = hidden_widths[l];
        if (out <= 0) throw ConfigError("extractor width must be positive");
        DenseLayer layer;
        layer.relu = true;
        layer.weight = Parameter(Tensor::matrix(out, in));
        layer.bias = Parameter(Tensor::vector(out));
        Rng rng(derive_seed(seed, 0x11, l));
        const double scale = std::sqrt(6.0 / static_cast<double>(in));
        for (double& v : layer.weight.value.values) v = rng.uniform(-scale, scale);
        extractor_.push_back(std::move(layer));
        in = out;
    }
    classifier_.relu = false;
    classifier_.weight = Parameter(Tensor::matrix(0, in));
    classifier_.bias = Parameter(Tensor::vector(0));
}

int Model::feature_dim() const {
    return extractor_.empty() ? input_dim_
                              : static_cast<int>(extractor_.back().out_dim());
}

void Model::add_task_classes(int n_new, std::uint64_t seed) {
    if (n_new <= 0) throw ConfigError("a task must contribute at least one class");
    const std::size_t feat = static_cast<std::size_t>(feature_dim());
    const std::size_t old = classifier_.out_dim();
    Rng rng(derive_seed(seed, 0x22, n_tasks_ + 1));

    Tensor w = Tensor::matrix(old + n_new, feat);
    std::copy(classifier_.weight.value.values.begin(), classifier_.weight.value.values.end(),
              w.values.begin());
    for (std::size_t i = old * feat; i < w.size(); ++i) w[i] = rng.uniform(-0.01, 0.01);

    const bool was_trainable = classifier_.weight.trainable;
    classifier_.weight = Parameter(std::move(w));
    classifier_.weight.trainable = was_trainable;

    Tensor b = Tensor::vector(old + n_new);
    std::copy(classifier_.bias.value.values.begin(), classifier_.bias.value.values.end(),
              b.values.begin());
    const bool bias_trainable = classifier_.bias.trainable;
    classifier_.bias = Parameter(std::move(b));
    classifier_.bias.trainable = bias_trainable;

    ++n_tasks_;
    class_to_task_.insert(class_to_task_.end(), n_new, n_tasks_);
    cache_.reset();
}

Tensor Model::run_extractor(const Tensor& batch, Cache* cache) const {
    if (batch.shape.size() != 2 || batch.cols() != static_cast<std::size_t>(input_dim_))
        throw ConfigError("input width " + std::to_string(batch.cols()) +
                          " does not match first layer width " + std::to_string(input_dim_));
    Tensor act = batch;
    if (cache) cache->input = batch;
    for (const DenseLayer& layer : extractor_) {
        Tensor z = affine(act, layer);
        act = layer.relu ? relu(z) : z;
        if (cache) {
            cache->preacts.push_back(std::move(z));
            cache->acts.push_back(act);
        }
    }
    return act;
}

Tensor Model::forward(const Tensor& batch, int n_classes_active, bool retain) {
    const int width = n_classes();
    if (n_classes_active < 0) n_classes_active = width;
    if (n_classes_active > width)
        throw ConfigError("requested " + std::to_string(n_classes_active) +
                          " active classes but classifier width is " + std::to_string(width));
    Cache cache;
    Tensor feats = run_extractor(batch, retain ? &cache : nullptr);
    Tensor logits = affine(feats, classifier_);
    if (retain) {
        cache.n_active = n_classes_active;
        cache_ = std::move(cache);
    }
    if (n_classes_active == width) return logits;
    Tensor out = Tensor::matrix(batch.rows(), static_cast<std::size_t>(n_classes_active));
    for (std::size_t n = 0; n < batch.rows(); ++n)
        for (int c = 0; c < n_classes_active; ++c)
            out.at(n, c) = logits.at(n, static_cast<std::size_t>(c));
    return out;
}

Tensor Model::features(const Tensor& batch) const { return run_extractor(batch, nullptr); }

void Model::backward(const Tensor& logit_grad) {
    if (!cache_) throw UsageError("backward called without a retained forward pass");
    const Cache& cache = *cache_;
    const std::size_t batch = cache.input.rows();
    const std::size_t width = classifier_.out_dim();
    if (logit_grad.rows() != batch ||
        logit_grad.cols() != static_cast<std::size_t>(cache.n_active))
        throw UsageError("logit gradient shape " + logit_grad.shape_string() +
                         " does not match the retained forward pass");

    // widen to the full head; truncated outputs carry zero gradient
    Tensor g = Tensor::matrix(batch, width);
    for (std::size_t n = 0; n < batch; ++n)
        for (int c = 0; c < cache.n_active; ++c)
            g.at(n, static_cast<std::size_t>(c)) = logit_grad.at(n, static_cast<std::size_t>(c));

    const Tensor& feats = extractor_.empty() ? cache.input : cache.acts.back();

    auto accumulate_layer = [batch](DenseLayer& layer, const Tensor& input, const Tensor& gout) {
        const std::size_t in = layer.in_dim();
        const std::size_t out = layer.out_dim();
        layer.weight.gradient.fill(0.0);
        layer.bias.gradient.fill(0.0);
        double* gw = layer.weight.gradient.values.data();
        double* gb = layer.bias.gradient.values.data();
        for (std::size_t n = 0; n < batch; ++n) {
            const double* xn = input.values.data() + n * in;
            const double* gn = gout.values.data() + n * out;
            for (std::size_t o = 0; o < out; ++o) {
                gb[o] += gn[o];
                double* gwo = gw + o * in;
                for (std::size_t i = 0; i < in; ++i) gwo[i] += gn[o] * xn[i];
            }
        }
        if (!layer.weight.trainable) layer.weight.gradient.fill(0.0);
        if (!layer.bias.trainable) layer.bias.gradient.fill(0.0);
    };

    auto input_gradient = [batch](const DenseLayer& layer, const Tensor& gout) {
        const std::size_t in = layer.in_dim();
        const std::size_t out = layer.out_dim();
        Tensor gx = Tensor::matrix(batch, in);
        const double* w = layer.weight.value.values.data();
        for (std::size_t n = 0; n < batch; ++n) {
            const double* gn = gout.values.data() + n * out;
            double* gxn = gx.values.data() + n * in;
            for (std::size_t o = 0; o < out; ++o) {
                const double* wo = w + o * in;
                for (std::size_t i = 0; i < in; ++i) gxn[i] += gn[o] * wo[i];
            }
        }
        return gx;
    };

    accumulate_layer(classifier_, feats, g);
    Tensor upstream = input_gradient(classifier_, g);

    for (std::size_t l = extractor_.size(); l-- > 0;) {
        DenseLayer& layer = extractor_[l];
        // ReLU mask; the subgradient at exactly zero is zero
        const Tensor& z = cache.preacts[l];
        for (std::size_t i = 0; i < upstream.size(); ++i)
            if (z[i] <= 0.0) upstream[i] = 0.0;
        const Tensor& input = l == 0 ? cache.input : cache.acts[l - 1];
        accumulate_layer(layer, input, upstream);
        if (l > 0) upstream = input_gradient(layer, upstream);
    }
}

void Model::set_trainable(bool extractor, bool classifier) {
    for (DenseLayer& layer : extractor_) {
        layer.weight.trainable = extractor;
        layer.bias.trainable = extractor;
    }
    classifier_.weight.trainable = classifier;
    classifier_.bias.trainable = classifier;
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    for (DenseLayer& layer : extractor_) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
    }
    out.push_back(&classifier_.weight);
    out.push_back(&classifier_.bias);
    return out;
}

std::vector<const Parameter*> Model::parameters() const {
    std::vector<const Parameter*> out;
    for (const DenseLayer& layer : extractor_) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
    }
    out.push_back(&classifier_.weight);
    out.push_back(&classifier_.bias);
    return out;
}

namespace {

constexpr char kSnapshotMagic[4] = {'C', 'I', 'L', 'M'};
constexpr std::uint32_t kSnapshotVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char buf[4];
    if (!is.read(reinterpret_cast<char*>(buf), 4))
        throw ParseError(std::string("snapshot truncated while reading ") + what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

double read_f64(std::istream& is, const char* what) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8))
        throw ParseError(std::string("snapshot truncated while reading ") + what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace

void save_parameters(const Model& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os.write(kSnapshotMagic, 4);
    write_u32(os, kSnapshotVersion);
    auto params = model.parameters();
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
        write_u32(os, static_cast<std::uint32_t>(p->value.shape.size()));
        for (std::size_t d : p->value.shape) write_u32(os, static_cast<std::uint32_t>(d));
        for (double v : p->value.values) write_f64(os, v);
    }
    if (!os) throw DataError("write failed for " + path.string());
}

void load_parameters(Model& model, const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kSnapshotMagic, 4) != 0)
        throw ParseError("bad snapshot magic in " + path.string());
    const std::uint32_t version = read_u32(is, "version");
    if (version != kSnapshotVersion)
        throw ParseError("unsupported snapshot version " + std::to_string(version));
    auto params = model.parameters();
    const std::uint32_t count = read_u32(is, "parameter count");
    if (count != params.size())
        throw DataError("snapshot has " + std::to_string(count) + " parameters, model has " +
                        std::to_string(params.size()));
    for (Parameter* p : params) {
        const std::uint32_t rank = read_u32(is, "shape rank");
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = read_u32(is, "dimension");
        if (shape != p->value.shape)
            throw DataError("snapshot parameter shape mismatch at " + path.string());
        for (double& v : p->value.values) v = read_f64(is, "values");
    }
}

} // namespace cil
