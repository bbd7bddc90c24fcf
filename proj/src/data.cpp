#include "cil/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "cil/errors.hpp"
#include "cil/rng.hpp"
#include "json.hpp"

namespace cil {

std::vector<int> TaskSequence::class_to_task() const {
    std::vector<int> map(static_cast<std::size_t>(n_classes), 0);
    for (const TaskSpec& task : tasks)
        for (int c : task.classes) map[static_cast<std::size_t>(c)] = task.task_index;
    return map;
}

int TaskSequence::cumulative_classes(int k) const {
    int count = 0;
    for (const TaskSpec& task : tasks)
        if (task.task_index <= k) count += static_cast<int>(task.classes.size());
    return count;
}

std::vector<const LabeledExample*> TaskSequence::cumulative_test(int k) const {
    std::vector<const LabeledExample*> out;
    for (const TaskSpec& task : tasks) {
        if (task.task_index > k) continue;
        for (const LabeledExample& ex : task.test) out.push_back(&ex);
    }
    return out;
}

std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>>
split_validation(const std::vector<LabeledExample>& train, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0)
        throw ConfigError("validation fraction must lie strictly between 0 and 1");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < train.size(); ++i) by_class[train[i].label].push_back(i);

    std::set<std::size_t> val_indices;
    for (const auto& [label, indices] : by_class) {
        if (indices.size() < 2)
            throw DataError("class " + std::to_string(label) +
                            " has fewer than 2 examples, cannot stratify");
        const std::size_t n_val = static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(indices.size())));
        std::vector<std::size_t> shuffled = indices;
        Rng rng(derive_seed(seed, 0x51, static_cast<std::uint64_t>(label)));
        rng.shuffle(shuffled);
        for (std::size_t i = 0; i < n_val; ++i) val_indices.insert(shuffled[i]);
    }

    std::vector<LabeledExample> kept, val;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (val_indices.count(i))
            val.push_back(train[i]);
        else
            kept.push_back(train[i]);
    }
    return {std::move(kept), std::move(val)};
}

namespace {

int infer_class_count(const std::vector<LabeledExample>& data) {
    int max_label = -1;
    for (const LabeledExample& ex : data) {
        if (ex.label < 0) throw DataError("negative class label");
        max_label = std::max(max_label, ex.label);
    }
    return max_label + 1;
}

void assign_ids(TaskSequence& sequence) {
    std::int64_t next = 0;
    for (TaskSpec& task : sequence.tasks) {
        for (LabeledExample& ex : task.train) ex.id = next++;
        for (LabeledExample& ex : task.val) ex.id = next++;
        for (LabeledExample& ex : task.test) ex.id = next++;
    }
}

} // namespace

std::vector<int> identity_order(int n_classes) {
    std::vector<int> order(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) order[static_cast<std::size_t>(c)] = c;
    return order;
}

std::vector<int> shuffled_order(int n_classes, std::uint64_t seed) {
    std::vector<int> order = identity_order(n_classes);
    Rng rng(derive_seed(seed, 0x52));
    rng.shuffle(order);
    return order;
}

TaskSequence build_task_sequence(const std::vector<LabeledExample>& train,
                                 const std::vector<LabeledExample>& test, int n_tasks,
                                 const std::vector<int>& class_order, double val_fraction,
                                 std::uint64_t seed) {
    if (n_tasks <= 0) throw ConfigError("task count must be positive");
    const int n_classes = std::max(infer_class_count(train), infer_class_count(test));
    if (n_classes == 0) throw DataError("dataset has no examples");
    if (n_classes % n_tasks != 0)
        throw ConfigError(std::to_string(n_classes) + " classes are not divisible into " +
                          std::to_string(n_tasks) + " tasks");
    if (static_cast<int>(class_order.size()) != n_classes)
        throw ConfigError("class order must list each class exactly once");
    {
        std::vector<bool> seen(static_cast<std::size_t>(n_classes), false);
        for (int c : class_order) {
            if (c < 0 || c >= n_classes || seen[static_cast<std::size_t>(c)])
                throw ConfigError("class order is not a permutation of the classes");
            seen[static_cast<std::size_t>(c)] = true;
        }
    }

    // original class -> new contiguous label
    std::vector<int> remap(static_cast<std::size_t>(n_classes));
    for (int j = 0; j < n_classes; ++j)
        remap[static_cast<std::size_t>(class_order[static_cast<std::size_t>(j)])] = j;

    const int block = n_classes / n_tasks;
    TaskSequence sequence;
    sequence.class_order = class_order;
    sequence.seed = seed;
    sequence.n_classes = n_classes;
    sequence.input_dim = train.empty() ? 0 : static_cast<int>(train.front().input.size());

    for (const LabeledExample& ex : train)
        if (static_cast<int>(ex.input.size()) != sequence.input_dim)
            throw DataError("inconsistent input dimension in train data");

    for (int t = 1; t <= n_tasks; ++t) {
        TaskSpec task;
        task.task_index = t;
        for (int j = (t - 1) * block; j < t * block; ++j) task.classes.push_back(j);

        std::vector<LabeledExample> task_train;
        for (const LabeledExample& ex : train) {
            const int new_label = remap[static_cast<std::size_t>(ex.label)];
            if (new_label >= (t - 1) * block && new_label < t * block) {
                LabeledExample copy = ex;
                copy.label = new_label;
                task_train.push_back(std::move(copy));
            }
        }
        for (int j : task.classes) {
            const bool present = std::any_of(task_train.begin(), task_train.end(),
                                             [j](const LabeledExample& e) { return e.label == j; });
            if (!present)
                throw DataError("class " + std::to_string(class_order[static_cast<std::size_t>(j)]) +
                                " has no training examples");
        }
        auto [kept, val] = split_validation(task_train, val_fraction,
                                            derive_seed(seed, 0x53, static_cast<std::uint64_t>(t)));
        task.train = std::move(kept);
        task.val = std::move(val);

        for (const LabeledExample& ex : test) {
            const int new_label = remap[static_cast<std::size_t>(ex.label)];
            if (new_label >= (t - 1) * block && new_label < t * block) {
                LabeledExample copy = ex;
                copy.label = new_label;
                task.test.push_back(std::move(copy));
            }
        }
        sequence.tasks.push_back(std::move(task));
    }
    assign_ids(sequence);
    return sequence;
}

namespace {

std::uint32_t read_be_u32(std::istream& is, const std::string& what) {
    unsigned char buf[4];
    if (!is.read(reinterpret_cast<char*>(buf), 4))
        throw ParseError("truncated IDX file while reading " + what);
    return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

} // namespace

std::vector<LabeledExample> load_idx(const std::filesystem::path& images_path,
                                     const std::filesystem::path& labels_path) {
    std::ifstream images(images_path, std::ios::binary);
    if (!images) throw DataError("cannot open " + images_path.string());
    std::ifstream labels(labels_path, std::ios::binary);
    if (!labels) throw DataError("cannot open " + labels_path.string());

    const std::uint32_t image_magic = read_be_u32(images, "image magic");
    if (image_magic != 0x00000803)
        throw ParseError("bad image magic in " + images_path.string() + " (got " +
                         std::to_string(image_magic) + ", want 2051)");
    const std::uint32_t n_images = read_be_u32(images, "image count");
    const std::uint32_t rows = read_be_u32(images, "row count");
    const std::uint32_t cols = read_be_u32(images, "column count");

    const std::uint32_t label_magic = read_be_u32(labels, "label magic");
    if (label_magic != 0x00000801)
        throw ParseError("bad label magic in " + labels_path.string() + " (got " +
                         std::to_string(label_magic) + ", want 2049)");
    const std::uint32_t n_labels = read_be_u32(labels, "label count");
    if (n_images != n_labels)
        throw ParseError("image count " + std::to_string(n_images) + " does not match label count " +
                         std::to_string(n_labels));

    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    std::vector<LabeledExample> out;
    out.reserve(n_images);
    std::vector<unsigned char> buf(pixels);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        if (!images.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels)))
            throw ParseError("truncated IDX file while reading pixel data of image " +
                             std::to_string(i));
        unsigned char label = 0;
        if (!labels.read(reinterpret_cast<char*>(&label), 1))
            throw ParseError("truncated IDX file while reading label " + std::to_string(i));
        LabeledExample ex;
        ex.id = static_cast<std::int64_t>(i);
        ex.label = static_cast<int>(label);
        ex.input.resize(pixels);
        for (std::size_t p = 0; p < pixels; ++p)
            ex.input[p] = static_cast<double>(buf[p]) / 255.0;
        out.push_back(std::move(ex));
    }
    return out;
}

TaskSequence gen_crosstask(int n_per_class, double noise_sigma, int distractor_dims,
                           std::uint64_t seed) {
    if (n_per_class <= 0) throw ConfigError("n_per_class must be positive");
    if (noise_sigma < 0.0) throw ConfigError("noise sigma must be nonnegative");
    if (distractor_dims < 0) throw ConfigError("distractor dimension count must be nonnegative");

    const int dim = 2 + distractor_dims;
    // class -> (color, shape); tasks differ in shape, classes within a task in color
    const double codes[4][2] = {{-1.0, -1.0}, {+1.0, -1.0}, {-1.0, +1.0}, {+1.0, +1.0}};

    auto sample = [&](int cls, Rng& rng) {
        LabeledExample ex;
        ex.label = cls;
        ex.input.assign(static_cast<std::size_t>(dim), 0.0);
        ex.input[0] = codes[cls][0];
        ex.input[1] = codes[cls][1];
        for (int d = 0; d < dim; ++d) ex.input[static_cast<std::size_t>(d)] += rng.normal(0.0, noise_sigma);
        return ex;
    };

    TaskSequence sequence;
    sequence.seed = seed;
    sequence.n_classes = 4;
    sequence.input_dim = dim;
    sequence.class_order = identity_order(4);

    for (int t = 1; t <= 2; ++t) {
        TaskSpec task;
        task.task_index = t;
        task.classes = {2 * (t - 1), 2 * (t - 1) + 1};

        std::vector<LabeledExample> train;
        Rng train_rng(derive_seed(seed, 0x61, static_cast<std::uint64_t>(t)));
        Rng test_rng(derive_seed(seed, 0x62, static_cast<std::uint64_t>(t)));
        for (int cls : task.classes)
            for (int i = 0; i < n_per_class; ++i) train.push_back(sample(cls, train_rng));
        for (int cls : task.classes)
            for (int i = 0; i < n_per_class; ++i) task.test.push_back(sample(cls, test_rng));

        auto [kept, val] = split_validation(train, 0.1,
                                            derive_seed(seed, 0x63, static_cast<std::uint64_t>(t)));
        task.train = std::move(kept);
        task.val = std::move(val);
        sequence.tasks.push_back(std::move(task));
    }
    assign_ids(sequence);
    return sequence;
}

TaskSequence gen_blob_images(const BlobImageConfig& config, std::uint64_t seed) {
    if (config.n_classes <= 0 || config.n_tasks <= 0)
        throw ConfigError("blob dataset needs positive class and task counts");
    if (config.n_classes % config.n_tasks != 0)
        throw ConfigError("blob dataset class count must divide evenly into tasks");
    if (config.n_per_class < 2) throw ConfigError("blob dataset needs at least 2 train examples per class");
    if (config.anchor_count < 2) throw ConfigError("blob dataset needs at least 2 anchors");
    if (config.height < 2 || config.width < 2) throw ConfigError("blob images must be at least 2x2");

    const int dim = config.height * config.width;
    Rng proto_rng(derive_seed(seed, 0x71));

    // shared anchor positions
    std::vector<std::pair<double, double>> anchors;
    for (int a = 0; a < config.anchor_count; ++a)
        anchors.emplace_back(proto_rng.uniform(1.0, config.height - 1.0),
                             proto_rng.uniform(1.0, config.width - 1.0));

    // every class gets a distinct anchor pair so no two prototypes collide
    std::vector<std::pair<int, int>> pairs;
    for (int a = 0; a < config.anchor_count; ++a)
        for (int b = a + 1; b < config.anchor_count; ++b) pairs.emplace_back(a, b);
    if (pairs.size() < static_cast<std::size_t>(config.n_classes))
        throw ConfigError("blob dataset needs enough anchors to give every class its own pair");
    proto_rng.shuffle(pairs);

    // per-class prototype: the pair's bumps with class-specific amplitudes
    std::vector<std::vector<double>> prototypes;
    for (int c = 0; c < config.n_classes; ++c) {
        std::vector<double> proto(static_cast<std::size_t>(dim), 0.0);
        const auto [a0, a1] = pairs[static_cast<std::size_t>(c)];
        const double amp0 = proto_rng.uniform(0.45, 0.95);
        const double amp1 = proto_rng.uniform(0.45, 0.95);
        for (int r = 0; r < config.height; ++r) {
            for (int col = 0; col < config.width; ++col) {
                auto bump = [&](int a, double amp) {
                    const double dr = r - anchors[static_cast<std::size_t>(a)].first;
                    const double dc = col - anchors[static_cast<std::size_t>(a)].second;
                    return amp * std::exp(-(dr * dr + dc * dc) /
                                          (2.0 * config.bump_sigma * config.bump_sigma));
                };
                proto[static_cast<std::size_t>(r * config.width + col)] =
                    bump(a0, amp0) + bump(a1, amp1);
            }
        }
        for (double& v : proto) v = std::min(v, 1.0);
        prototypes.push_back(std::move(proto));
    }

    auto sample = [&](int cls, Rng& rng) {
        LabeledExample ex;
        ex.label = cls;
        ex.input.resize(static_cast<std::size_t>(dim));
        const std::vector<double>& proto = prototypes[static_cast<std::size_t>(cls)];
        for (int d = 0; d < dim; ++d) {
            double v = proto[static_cast<std::size_t>(d)] + rng.normal(0.0, config.noise_sigma);
            ex.input[static_cast<std::size_t>(d)] = std::clamp(v, 0.0, 1.0);
        }
        return ex;
    };

    std::vector<LabeledExample> train, test;
    Rng train_rng(derive_seed(seed, 0x72));
    Rng test_rng(derive_seed(seed, 0x73));
    for (int c = 0; c < config.n_classes; ++c)
        for (int i = 0; i < config.n_per_class; ++i) train.push_back(sample(c, train_rng));
    for (int c = 0; c < config.n_classes; ++c)
        for (int i = 0; i < config.test_per_class; ++i) test.push_back(sample(c, test_rng));

    return build_task_sequence(train, test, config.n_tasks, identity_order(config.n_classes), 0.1,
                               seed);
}

namespace {

constexpr char kDataMagic[4] = {'C', 'I', 'L', 'D'};

void write_examples(const std::vector<LabeledExample>& examples, int dim,
                    const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os.write(kDataMagic, 4);
    auto write_u32 = [&](std::uint32_t v) {
        unsigned char buf[4];
        for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(buf), 4);
    };
    write_u32(1);
    write_u32(static_cast<std::uint32_t>(examples.size()));
    write_u32(static_cast<std::uint32_t>(dim));
    for (const LabeledExample& ex : examples) {
        std::uint64_t id_bits = static_cast<std::uint64_t>(ex.id);
        unsigned char idb[8];
        for (int i = 0; i < 8; ++i) idb[i] = static_cast<unsigned char>((id_bits >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(idb), 8);
        write_u32(static_cast<std::uint32_t>(ex.label));
        for (double v : ex.input) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            unsigned char vb[8];
            for (int i = 0; i < 8; ++i) vb[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
            os.write(reinterpret_cast<const char*>(vb), 8);
        }
    }
}

std::vector<LabeledExample> read_examples(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kDataMagic, 4) != 0)
        throw ParseError("bad data magic in " + path.string());
    auto read_u32 = [&](const char* what) {
        unsigned char buf[4];
        if (!is.read(reinterpret_cast<char*>(buf), 4))
            throw ParseError(std::string("truncated data file while reading ") + what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
        return v;
    };
    const std::uint32_t version = read_u32("version");
    if (version != 1) throw ParseError("unsupported data file version");
    const std::uint32_t count = read_u32("example count");
    const std::uint32_t dim = read_u32("input dimension");
    std::vector<LabeledExample> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        LabeledExample ex;
        unsigned char idb[8];
        if (!is.read(reinterpret_cast<char*>(idb), 8))
            throw ParseError("truncated data file while reading example id");
        std::uint64_t id_bits = 0;
        for (int b = 0; b < 8; ++b) id_bits |= static_cast<std::uint64_t>(idb[b]) << (8 * b);
        ex.id = static_cast<std::int64_t>(id_bits);
        ex.label = static_cast<int>(read_u32("label"));
        ex.input.resize(dim);
        for (std::uint32_t d = 0; d < dim; ++d) {
            unsigned char vb[8];
            if (!is.read(reinterpret_cast<char*>(vb), 8))
                throw ParseError("truncated data file while reading input values");
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(vb[b]) << (8 * b);
            double v;
            std::memcpy(&v, &bits, 8);
            ex.input[d] = v;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

} // namespace

void save_sequence(const TaskSequence& sequence, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["seed"] = sequence.seed;
    manifest["class_order"] = sequence.class_order;
    manifest["input_dim"] = sequence.input_dim;
    manifest["n_classes"] = sequence.n_classes;
    manifest["tasks"] = nlohmann::json::array();
    for (const TaskSpec& task : sequence.tasks) {
        const std::string stem = "task" + std::to_string(task.task_index);
        nlohmann::json entry;
        entry["task_index"] = task.task_index;
        entry["classes"] = task.classes;
        entry["train"] = stem + "_train.bin";
        entry["val"] = stem + "_val.bin";
        entry["test"] = stem + "_test.bin";
        write_examples(task.train, sequence.input_dim, dir / (stem + "_train.bin"));
        write_examples(task.val, sequence.input_dim, dir / (stem + "_val.bin"));
        write_examples(task.test, sequence.input_dim, dir / (stem + "_test.bin"));
        manifest["tasks"].push_back(std::move(entry));
    }
    std::ofstream os(dir / "manifest.json");
    if (!os) throw DataError("cannot write manifest in " + dir.string());
    os << manifest.dump(2) << "\n";
}

TaskSequence load_sequence(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw DataError("cannot open manifest in " + dir.string());
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad sequence manifest: " + std::string(e.what()));
    }
    TaskSequence sequence;
    sequence.seed = manifest.at("seed").get<std::uint64_t>();
    sequence.class_order = manifest.at("class_order").get<std::vector<int>>();
    sequence.input_dim = manifest.at("input_dim").get<int>();
    sequence.n_classes = manifest.at("n_classes").get<int>();
    for (const auto& entry : manifest.at("tasks")) {
        TaskSpec task;
        task.task_index = entry.at("task_index").get<int>();
        task.classes = entry.at("classes").get<std::vector<int>>();
        task.train = read_examples(dir / entry.at("train").get<std::string>());
        task.val = read_examples(dir / entry.at("val").get<std::string>());
        task.test = read_examples(dir / entry.at("test").get<std::string>());
        sequence.tasks.push_back(std::move(task));
    }
    return sequence;
}

std::uint64_t dataset_fingerprint(const TaskSequence& sequence) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_byte = [&h](unsigned char b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    };
    auto mix_u64 = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) mix_byte(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
    };
    auto mix_examples = [&](const std::vector<LabeledExample>& examples) {
        for (const LabeledExample& ex : examples) {
            mix_u64(static_cast<std::uint64_t>(ex.id));
            mix_u64(static_cast<std::uint64_t>(ex.label));
            for (double v : ex.input) {
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                mix_u64(bits);
            }
        }
    };
    for (const TaskSpec& task : sequence.tasks) {
        mix_u64(static_cast<std::uint64_t>(task.task_index));
        mix_examples(task.train);
        mix_examples(task.val);
        mix_examples(task.test);
    }
    return h;
}

} // namespace cil
