#include "mapu/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mapu/binary_io.hpp"
#include "mapu/random.hpp"

namespace mapu {

namespace {

constexpr std::string_view kDatasetMagic = "TSD1";
constexpr std::uint32_t kDatasetVersion = 1;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Channel c carries harmonic 1 + (c mod 2) of the class waveform at phase
// offset c * pi/3, scaled by 1 / (1 + c/2).
std::size_t channel_harmonic(std::size_t c) { return 1 + (c % 2); }
double channel_gain(std::size_t c) { return 1.0 / (1.0 + 0.5 * static_cast<double>(c)); }
double channel_phase(std::size_t c) { return static_cast<double>(c) * std::numbers::pi / 3.0; }

double waveform_value(Waveform w, double phase) {
    switch (w) {
        case Waveform::sine:
        case Waveform::chirp: return std::sin(phase);
        case Waveform::square: {
            const double s = std::sin(phase);
            return s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0);
        }
    }
    return 0.0;
}

// Phase at step t for `cycles` cycles per window; chirps sweep from f to 2f.
double phase_at(Waveform w, double cycles, double t, double length) {
    const double u = t / length;
    if (w == Waveform::chirp) return kTwoPi * cycles * (u + 0.5 * u * u);
    return kTwoPi * cycles * u;
}

double peak_frequency(const ClassArchetype& a) { return a.waveform == Waveform::chirp ? 2.0 * a.frequency : a.frequency; }

}  // namespace

// ---- Dataset ----------------------------------------------------------------

void Dataset::validate() const {
    if (n < 1) throw DomainError("dataset must hold at least one sample");
    if (channels < 1 || length < 1) throw DomainError("dataset needs positive channel count and length");
    if (classes < 1) throw DomainError("dataset needs at least one class");
    if (labels.size() != n) throw ShapeError("dataset label count does not match n");
    if (samples.size() != n * channels * length) throw ShapeError("dataset sample buffer does not match n*C*L");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw DomainError("dataset label " + std::to_string(y) + " outside [0, K)");
        }
    }
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
    const std::size_t stride = channels * length;
    std::vector<double> out;
    out.reserve(indices.size() * stride);
    for (std::size_t i : indices) {
        if (i >= n) throw DomainError("dataset index out of range");
        out.insert(out.end(), samples.begin() + static_cast<std::ptrdiff_t>(i * stride),
                   samples.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
    }
    return Tensor::from({indices.size(), channels, length}, std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels.at(i));
    return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.n = indices.size();
    out.channels = channels;
    out.length = length;
    out.classes = classes;
    const std::size_t stride = channels * length;
    out.samples.reserve(out.n * stride);
    for (std::size_t i : indices) {
        out.samples.insert(out.samples.end(), samples.begin() + static_cast<std::ptrdiff_t>(i * stride),
                           samples.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
        out.labels.push_back(labels.at(i));
    }
    return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(classes, 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
}

// ---- generator --------------------------------------------------------------

const char* waveform_name(Waveform w) {
    switch (w) {
        case Waveform::sine: return "sine";
        case Waveform::square: return "square";
        case Waveform::chirp: return "chirp";
    }
    return "?";
}

Waveform waveform_from_name(const std::string& name) {
    if (name == "sine") return Waveform::sine;
    if (name == "square") return Waveform::square;
    if (name == "chirp") return Waveform::chirp;
    throw DomainError("unknown waveform '" + name + "'");
}

ShiftParams interpolate_shift(const ShiftParams& from, const ShiftParams& to, double knob) {
    if (!(knob >= 0.0 && knob <= 1.0)) throw DomainError("shift knob must lie in [0, 1]");
    auto lerp = [knob](double a, double b) { return a + knob * (b - a); };
    return {lerp(from.noise_sigma, to.noise_sigma), lerp(from.amplitude_scale, to.amplitude_scale),
            lerp(from.phase_jitter, to.phase_jitter), lerp(from.time_warp, to.time_warp),
            lerp(from.mix_angle, to.mix_angle)};
}

std::vector<ClassArchetype> default_archetypes() {
    return {
        {3.0, Waveform::sine, 1.0},
        {3.0, Waveform::square, 0.8},
        {6.0, Waveform::sine, 1.0},
        {4.0, Waveform::chirp, 1.0},
        {7.0, Waveform::square, 0.8},
    };
}

Dataset generate_domain(const DomainSpec& spec, std::size_t n, std::size_t channels, std::size_t length,
                        std::size_t classes) {
    if (n < 1 || channels < 1 || length < 2) throw DomainError("generate_domain: n, C must be >= 1 and L >= 2");
    if (classes < 1 || classes > spec.archetypes.size()) {
        throw DomainError("generate_domain: K exceeds the number of class archetypes");
    }
    const auto& s = spec.shift;
    if (!(s.time_warp >= 0.5 && s.time_warp <= 2.0)) throw DomainError("generate_domain: time warp outside [0.5, 2]");
    if (s.noise_sigma < 0.0 || s.phase_jitter < 0.0) throw DomainError("generate_domain: negative noise or jitter");
    const std::size_t max_harmonic = channels > 1 ? 2 : 1;
    for (std::size_t k = 0; k < classes; ++k) {
        const auto& a = spec.archetypes[k];
        if (!(a.frequency > 0.0)) throw DomainError("generate_domain: frequencies must be positive");
        const double top = peak_frequency(a) * s.time_warp * static_cast<double>(max_harmonic);
        if (top >= static_cast<double>(length) / 2.0) {
            throw DomainError("generate_domain: class " + std::to_string(k) + " exceeds the Nyquist limit");
        }
    }

    Dataset ds;
    ds.n = n;
    ds.channels = channels;
    ds.length = length;
    ds.classes = classes;
    ds.labels.resize(n);
    ds.samples.resize(n * channels * length);

    const double mix_self = std::cos(s.mix_angle) * std::cos(s.mix_angle);
    const double mix_other = 1.0 - mix_self;
    std::vector<double> clean(channels * length);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = i % classes;
        ds.labels[i] = static_cast<int>(k);
        const auto& a = spec.archetypes[k];
        Rng rng(mix_seed(spec.seed, i));
        const double phase = s.phase_jitter > 0.0 ? rng.uniform(-s.phase_jitter, s.phase_jitter) : 0.0;
        const double amp = a.amplitude * s.amplitude_scale;
        for (std::size_t c = 0; c < channels; ++c) {
            const double cycles = a.frequency * s.time_warp * static_cast<double>(channel_harmonic(c));
            for (std::size_t t = 0; t < length; ++t) {
                const double theta =
                    phase_at(a.waveform, cycles, static_cast<double>(t), static_cast<double>(length)) + phase +
                    channel_phase(c);
                clean[c * length + t] = amp * channel_gain(c) * waveform_value(a.waveform, theta);
            }
        }
        // channel 0/1 mixing as a convex combination
        if (channels > 1 && mix_other > 0.0) {
            for (std::size_t t = 0; t < length; ++t) {
                const double c0 = clean[t], c1 = clean[length + t];
                clean[t] = mix_self * c0 + mix_other * c1;
                clean[length + t] = mix_other * c0 + mix_self * c1;
            }
        }
        float* out = ds.samples.data() + i * channels * length;
        for (std::size_t j = 0; j < channels * length; ++j) {
            double noise = 0.0;
            if (s.noise_sigma > 0.0) noise = s.noise_sigma * std::clamp(rng.normal(), -6.0, 6.0);
            out[j] = static_cast<float>(clean[j] + noise);
        }
    }
    return ds;
}

// ---- TSD1 ---------------------------------------------------------------------

std::vector<char> encode_dataset(const Dataset& ds) {
    ds.validate();
    io::ByteWriter w;
    w.bytes(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u64(ds.n);
    w.u32(static_cast<std::uint32_t>(ds.channels));
    w.u32(static_cast<std::uint32_t>(ds.length));
    w.u32(static_cast<std::uint32_t>(ds.classes));
    for (int y : ds.labels) w.u32(static_cast<std::uint32_t>(y));
    for (float v : ds.samples) w.f32(v);
    return w.take();
}

Dataset decode_dataset(const std::vector<char>& bytes) {
    io::ByteReader r(bytes, "dataset");
    if (bytes.size() < 4 || r.bytes(4) != kDatasetMagic) throw BadMagicError("dataset: bad magic");
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion) throw VersionError("dataset: unsupported version " + std::to_string(version));
    Dataset ds;
    ds.n = r.u64();
    ds.channels = r.u32();
    ds.length = r.u32();
    ds.classes = r.u32();
    const std::uint64_t expected = ds.n * 4 + ds.n * ds.channels * ds.length * 4;
    if (r.remaining() < expected) throw TruncatedError("dataset: truncated file");
    if (r.remaining() > expected) throw FormatError("dataset: trailing bytes");
    ds.labels.resize(ds.n);
    for (auto& y : ds.labels) y = static_cast<int>(r.u32());
    ds.samples.resize(ds.n * ds.channels * ds.length);
    for (auto& v : ds.samples) v = r.f32();
    try {
        ds.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("dataset: ") + e.what());
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    io::write_file_atomic(path, encode_dataset(ds));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path)); }

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DomainError("split: fraction must lie in (0, 1)");
    ds.validate();
    std::vector<std::vector<std::size_t>> by_class(ds.classes);
    for (std::size_t i = 0; i < ds.n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    std::vector<std::size_t> first, second;
    Rng rng(seed);
    for (auto& members : by_class) {
        rng.shuffle(members.begin(), members.end());
        const auto take = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
        first.insert(first.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
        second.insert(second.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
    }
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());
    if (first.empty() || second.empty()) throw DomainError("split: one side would be empty");
    return {ds.subset(first), ds.subset(second)};
}

}  // namespace mapu
