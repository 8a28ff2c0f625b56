#include "fedfed/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fedfed/rng.hpp"

namespace fedfed {

void LabeledDataset::validate() const {
    if (features.rows < 1) throw DomainError("dataset must have at least one sample");
    if (static_cast<int>(labels.size()) != features.rows)
        throw ConsistencyError("label count does not match feature rows");
    if (num_classes < 1) throw DomainError("num_classes must be >= 1");
    for (int y : labels)
        if (y < 0 || y >= num_classes) throw DomainError("label outside [0, C)");
    for (double v : features.data)
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("feature outside [0, 1]");
}

void PartitionSpec::validate(int num_classes) const {
    if (num_clients < 1) throw DomainError("num_clients must be >= 1");
    switch (method) {
        case Method::Lda:
            if (!(alpha > 0.0)) throw DomainError("lda alpha must be > 0");
            break;
        case Method::LabelsPerClient:
            if (labels_per_client < 1) throw DomainError("labels per client must be >= 1");
            if (labels_per_client > num_classes)
                throw DomainError("labels per client cannot exceed the class count");
            break;
        case Method::Subset:
            if (!(dominant_fraction > 1.0 / num_classes && dominant_fraction <= 1.0))
                throw DomainError("dominant fraction must be in (1/C, 1]");
            break;
    }
}

Matrix rescale_unit_interval(const Matrix& raw) {
    if (raw.rows == 0 || raw.cols == 0) throw DomainError("cannot rescale an empty matrix");
    for (double v : raw.data)
        if (!std::isfinite(v)) throw NumericError("non-finite value in rescale input");
    Matrix out(raw.rows, raw.cols);
    for (int c = 0; c < raw.cols; ++c) {
        double lo = raw(0, c), hi = raw(0, c);
        for (int r = 1; r < raw.rows; ++r) {
            lo = std::min(lo, raw(r, c));
            hi = std::max(hi, raw(r, c));
        }
        const double span = hi - lo;
        for (int r = 0; r < raw.rows; ++r)
            out(r, c) = span > 0.0 ? (raw(r, c) - lo) / span : 0.0;
    }
    return out;
}

namespace {

std::vector<std::vector<int>> indices_by_class(const LabeledDataset& data) {
    std::vector<std::vector<int>> by_class(static_cast<size_t>(data.num_classes));
    for (int i = 0; i < data.size(); ++i)
        by_class[static_cast<size_t>(data.labels[static_cast<size_t>(i)])].push_back(i);
    return by_class;
}

// Largest-remainder allocation of `total` items to `weights`-proportional bins.
std::vector<int> proportional_counts(const std::vector<double>& weights, int total) {
    const size_t k = weights.size();
    std::vector<int> counts(k, 0);
    std::vector<std::pair<double, size_t>> remainders(k);
    int assigned = 0;
    for (size_t i = 0; i < k; ++i) {
        const double exact = weights[i] * total;
        counts[i] = static_cast<int>(std::floor(exact));
        assigned += counts[i];
        remainders[i] = {exact - counts[i], i};
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; i < total - assigned; ++i) ++counts[remainders[static_cast<size_t>(i)].second];
    return counts;
}

PartitionResult partition_lda(const LabeledDataset& data, const PartitionSpec& spec) {
    const int K = spec.num_clients;
    PartitionResult result;
    result.assignments.resize(static_cast<size_t>(K));
    auto by_class = indices_by_class(data);
    for (int c = 0; c < data.num_classes; ++c) {
        auto& members = by_class[static_cast<size_t>(c)];
        if (members.empty()) continue;
        RngStream rng = RngStream::derive(spec.seed, {stream_tag("lda"), static_cast<uint64_t>(c)});
        const std::vector<double> props = rng.dirichlet(spec.alpha, K);
        rng.shuffle(members);
        const std::vector<int> counts = proportional_counts(props, static_cast<int>(members.size()));
        size_t cursor = 0;
        for (int k = 0; k < K; ++k)
            for (int j = 0; j < counts[static_cast<size_t>(k)]; ++j)
                result.assignments[static_cast<size_t>(k)].push_back(members[cursor++]);
    }
    return result;
}

PartitionResult partition_labels_per_client(const LabeledDataset& data, const PartitionSpec& spec) {
    const int K = spec.num_clients;
    const int C = data.num_classes;
    const int k = spec.labels_per_client;
    if (static_cast<long long>(K) * k < C)
        throw InfeasibleError("K*k label slots cannot cover all classes");

    // Deal labels round-robin over a seeded permutation; client i owns
    // perm[(i*k + j) mod C] for j in [0, k).
    std::vector<int> perm(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) perm[static_cast<size_t>(c)] = c;
    RngStream perm_rng = RngStream::derive(spec.seed, {stream_tag("labelperm")});
    perm_rng.shuffle(perm);
    std::vector<std::vector<int>> owners(static_cast<size_t>(C));
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < k; ++j) {
            const int label = perm[static_cast<size_t>((static_cast<long long>(i) * k + j) % C)];
            owners[static_cast<size_t>(label)].push_back(i);
        }

    PartitionResult result;
    result.assignments.resize(static_cast<size_t>(K));
    auto by_class = indices_by_class(data);
    for (int c = 0; c < C; ++c) {
        auto& members = by_class[static_cast<size_t>(c)];
        if (members.empty()) continue;
        auto& own = owners[static_cast<size_t>(c)];
        std::sort(own.begin(), own.end());
        RngStream rng = RngStream::derive(spec.seed, {stream_tag("labelsplit"), static_cast<uint64_t>(c)});
        rng.shuffle(members);
        const int per = static_cast<int>(members.size()) / static_cast<int>(own.size());
        const int rem = static_cast<int>(members.size()) % static_cast<int>(own.size());
        size_t cursor = 0;
        for (size_t o = 0; o < own.size(); ++o) {
            const int take = per + (static_cast<int>(o) < rem ? 1 : 0);
            for (int j = 0; j < take; ++j)
                result.assignments[static_cast<size_t>(own[o])].push_back(members[cursor++]);
        }
    }
    return result;
}

PartitionResult partition_subset(const LabeledDataset& data, const PartitionSpec& spec) {
    const int K = spec.num_clients;
    const int C = data.num_classes;
    const int n = data.size();

    std::vector<int> quota(static_cast<size_t>(K), n / K);
    for (int i = 0; i < n % K; ++i) ++quota[static_cast<size_t>(i)];  // remainders to lowest ids

    auto by_class = indices_by_class(data);
    for (int c = 0; c < C; ++c) {
        RngStream rng = RngStream::derive(spec.seed, {stream_tag("subset"), static_cast<uint64_t>(c)});
        rng.shuffle(by_class[static_cast<size_t>(c)]);
    }
    std::vector<size_t> cursor(static_cast<size_t>(C), 0);

    PartitionResult result;
    result.assignments.resize(static_cast<size_t>(K));
    // Phase 1: each client pulls its dominant-class share (client i -> class i mod C).
    for (int i = 0; i < K; ++i) {
        const int c = i % C;
        auto& pool = by_class[static_cast<size_t>(c)];
        int want = static_cast<int>(std::floor(spec.dominant_fraction * quota[static_cast<size_t>(i)]));
        while (want > 0 && cursor[static_cast<size_t>(c)] < pool.size()) {
            result.assignments[static_cast<size_t>(i)].push_back(pool[cursor[static_cast<size_t>(c)]++]);
            --want;
        }
    }
    // Phase 2: fill remaining quota uniformly from the leftover pool.
    std::vector<int> leftovers;
    for (int c = 0; c < C; ++c)
        for (size_t j = cursor[static_cast<size_t>(c)]; j < by_class[static_cast<size_t>(c)].size(); ++j)
            leftovers.push_back(by_class[static_cast<size_t>(c)][j]);
    RngStream rng = RngStream::derive(spec.seed, {stream_tag("subsetfill")});
    rng.shuffle(leftovers);
    size_t pos = 0;
    for (int i = 0; i < K; ++i) {
        auto& mine = result.assignments[static_cast<size_t>(i)];
        while (static_cast<int>(mine.size()) < quota[static_cast<size_t>(i)] && pos < leftovers.size())
            mine.push_back(leftovers[pos++]);
    }
    return result;
}

// Extreme skew can leave clients empty; repair by moving one sample from the
// largest client until everyone holds at least one.
void repair_empty_clients(PartitionResult& result) {
    for (auto& client : result.assignments) {
        if (!client.empty()) continue;
        size_t largest = 0;
        for (size_t k = 1; k < result.assignments.size(); ++k)
            if (result.assignments[k].size() > result.assignments[largest].size()) largest = k;
        if (result.assignments[largest].size() <= 1) throw InfeasibleError("not enough samples to cover clients");
        client.push_back(result.assignments[largest].back());
        result.assignments[largest].pop_back();
    }
}

}  // namespace

PartitionResult partition(const LabeledDataset& data, const PartitionSpec& spec) {
    data.validate();
    spec.validate(data.num_classes);
    if (data.size() < spec.num_clients)
        throw InfeasibleError("fewer samples than clients");

    PartitionResult result;
    switch (spec.method) {
        case PartitionSpec::Method::Lda: result = partition_lda(data, spec); break;
        case PartitionSpec::Method::LabelsPerClient: result = partition_labels_per_client(data, spec); break;
        case PartitionSpec::Method::Subset: result = partition_subset(data, spec); break;
    }
    repair_empty_clients(result);
    return result;
}

LabeledDataset synthesize_blobs(int num_classes, int dim, int per_class, double spread,
                                uint64_t seed) {
    if (num_classes < 1 || dim < 1 || per_class < 1)
        throw DomainError("blob parameters must be >= 1");
    if (!(spread > 0.0)) throw DomainError("spread must be > 0");

    RngStream center_rng = RngStream::derive(seed, {stream_tag("centers")});
    Matrix centers(num_classes, dim);
    for (double& v : centers.data) v = center_rng.uniform(0.2, 0.8);

    const int n = num_classes * per_class;
    Matrix raw(n, dim);
    std::vector<int> labels(static_cast<size_t>(n));
    int row = 0;
    for (int c = 0; c < num_classes; ++c) {
        RngStream rng = RngStream::derive(seed, {stream_tag("blob"), static_cast<uint64_t>(c)});
        for (int j = 0; j < per_class; ++j, ++row) {
            labels[static_cast<size_t>(row)] = c;
            for (int d = 0; d < dim; ++d) raw(row, d) = centers(c, d) + rng.normal(0.0, spread);
        }
    }
    LabeledDataset out;
    out.features = rescale_unit_interval(raw);
    out.labels = std::move(labels);
    out.num_classes = num_classes;
    return out;
}

namespace {

uint32_t read_u32_be(std::istream& is, const std::string& what) {
    unsigned char buf[4];
    is.read(reinterpret_cast<char*>(buf), 4);
    if (is.gcount() != 4) throw FormatError("truncated idx file while reading " + what);
    return (static_cast<uint32_t>(buf[0]) << 24) | (static_cast<uint32_t>(buf[1]) << 16) |
           (static_cast<uint32_t>(buf[2]) << 8) | static_cast<uint32_t>(buf[3]);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw FormatError("cannot open " + images_path);
    if (read_u32_be(imgs, "image magic") != 0x00000803u)
        throw FormatError("bad image magic in " + images_path);
    const uint32_t count = read_u32_be(imgs, "image count");
    const uint32_t rows = read_u32_be(imgs, "image rows");
    const uint32_t cols = read_u32_be(imgs, "image cols");
    const size_t pixels = static_cast<size_t>(count) * rows * cols;
    std::vector<unsigned char> buf(pixels);
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
    if (static_cast<size_t>(imgs.gcount()) != pixels)
        throw FormatError("truncated image data in " + images_path);

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw FormatError("cannot open " + labels_path);
    if (read_u32_be(labs, "label magic") != 0x00000801u)
        throw FormatError("bad label magic in " + labels_path);
    const uint32_t label_count = read_u32_be(labs, "label count");
    if (label_count != count)
        throw ConsistencyError("image/label counts differ: " + std::to_string(count) + " vs " +
                               std::to_string(label_count));
    std::vector<unsigned char> lab_buf(label_count);
    labs.read(reinterpret_cast<char*>(lab_buf.data()), static_cast<std::streamsize>(label_count));
    if (static_cast<size_t>(labs.gcount()) != label_count)
        throw FormatError("truncated label data in " + labels_path);

    LabeledDataset out;
    out.features = Matrix(static_cast<int>(count), static_cast<int>(rows * cols));
    for (size_t i = 0; i < pixels; ++i) out.features.data[i] = buf[i] / 255.0;
    out.labels.resize(label_count);
    int max_label = 0;
    for (size_t i = 0; i < lab_buf.size(); ++i) {
        out.labels[i] = lab_buf[i];
        max_label = std::max(max_label, out.labels[i]);
    }
    out.num_classes = max_label + 1;
    out.validate();
    return out;
}

LabeledDataset load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("empty csv " + path);

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    if (header.size() < 2 || header.back() != "label")
        throw FormatError("csv header must be f0..f{d-1},label");
    const int dim = static_cast<int>(header.size()) - 1;
    for (int d = 0; d < dim; ++d)
        if (header[static_cast<size_t>(d)] != "f" + std::to_string(d))
            throw FormatError("unexpected csv column " + header[static_cast<size_t>(d)]);

    std::vector<double> values;
    std::vector<int> labels;
    int rows = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int col = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                if (col < dim)
                    values.push_back(std::stod(cell));
                else
                    labels.push_back(std::stoi(cell));
            } catch (const std::exception&) {
                throw FormatError("bad csv value '" + cell + "' at row " + std::to_string(rows + 2));
            }
            ++col;
        }
        if (col != dim + 1)
            throw FormatError("csv row " + std::to_string(rows + 2) + " has " + std::to_string(col) +
                              " cells, expected " + std::to_string(dim + 1));
        ++rows;
    }
    if (rows == 0) throw FormatError("csv has no data rows");

    Matrix raw(rows, dim);
    raw.data = std::move(values);
    LabeledDataset out;
    out.features = rescale_unit_interval(raw);
    out.labels = std::move(labels);
    int max_label = 0;
    for (int y : out.labels) {
        if (y < 0) throw DomainError("negative label in csv");
        max_label = std::max(max_label, y);
    }
    out.num_classes = max_label + 1;
    out.validate();
    return out;
}

LabeledDataset take_subset(const LabeledDataset& data, const std::vector<int>& indices) {
    if (indices.empty()) throw DomainError("subset must be non-empty");
    LabeledDataset out;
    out.features = Matrix(static_cast<int>(indices.size()), data.dim());
    out.labels.resize(indices.size());
    out.num_classes = data.num_classes;
    for (size_t r = 0; r < indices.size(); ++r) {
        const int src = indices[r];
        if (src < 0 || src >= data.size()) throw DomainError("subset index out of range");
        for (int c = 0; c < data.dim(); ++c) out.features(static_cast<int>(r), c) = data.features(src, c);
        out.labels[r] = data.labels[static_cast<size_t>(src)];
    }
    return out;
}

std::pair<std::vector<int>, std::vector<int>> stratified_split(const LabeledDataset& data,
                                                               double fraction, uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw DomainError("split fraction must be in [0, 1)");
    std::vector<int> kept, held;
    std::vector<std::vector<int>> by_class(static_cast<size_t>(data.num_classes));
    for (int i = 0; i < data.size(); ++i)
        by_class[static_cast<size_t>(data.labels[static_cast<size_t>(i)])].push_back(i);
    for (int c = 0; c < data.num_classes; ++c) {
        auto& members = by_class[static_cast<size_t>(c)];
        RngStream rng = RngStream::derive(seed, {stream_tag("split"), static_cast<uint64_t>(c)});
        rng.shuffle(members);
        const int out = static_cast<int>(std::llround(fraction * static_cast<double>(members.size())));
        for (size_t j = 0; j < members.size(); ++j)
            (static_cast<int>(j) < out ? held : kept).push_back(members[j]);
    }
    std::sort(kept.begin(), kept.end());
    std::sort(held.begin(), held.end());
    return {kept, held};
}

std::vector<std::vector<int>> partition_histogram(const LabeledDataset& data,
                                                  const PartitionResult& result) {
    std::vector<std::vector<int>> hist(result.assignments.size(),
                                       std::vector<int>(static_cast<size_t>(data.num_classes), 0));
    for (size_t k = 0; k < result.assignments.size(); ++k)
        for (int idx : result.assignments[k])
            ++hist[k][static_cast<size_t>(data.labels[static_cast<size_t>(idx)])];
    return hist;
}

}  // namespace fedfed
