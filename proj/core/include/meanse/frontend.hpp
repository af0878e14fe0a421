#pragma once

// Synthetic corpus generation, SNR mixing, and the STFT front end.
//
// The STFT is centered (reflect padding of n_fft / 2 on both ends) and
// unnormalized. The inverse is weighted overlap-add: each inverse frame is
// multiplied by the synthesis window and the sum is divided by the
// overlapped squared window, which reconstructs exactly wherever that sum is
// nonzero.

#include <complex>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "meanse/autodiff.hpp"
#include "meanse/rng.hpp"

namespace meanse::frontend {

using Waveform = std::vector<double>;

enum class Window : std::uint8_t { hann = 0, rectangular = 1 };

std::string to_string(Window w);
Window window_from_string(const std::string& name);

struct StftConfig {
  std::size_t n_fft = 126;
  std::size_t hop = 32;
  Window window = Window::hann;  ///< periodic
  std::uint32_t sample_rate_hz = 8000;

  std::size_t n_bins() const { return n_fft / 2 + 1; }
  /// Throws StftError for hop > n_fft, n_fft < 2, or a window/hop pair whose
  /// overlapped squared window vanishes somewhere.
  void validate() const;
};

class StftError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Complex spectrogram, frame-major: value(f, k) = data[f * bins + k].
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> data;

  std::complex<double>& at(std::size_t f, std::size_t k) { return data[f * bins + k]; }
  std::complex<double> at(std::size_t f, std::size_t k) const { return data[f * bins + k]; }
};

std::vector<double> make_window(Window w, std::size_t n);

/// Reusable transform for one geometry. Not safe for concurrent use.
class Stft {
 public:
  explicit Stft(StftConfig cfg);
  ~Stft();
  Stft(const Stft&) = delete;
  Stft& operator=(const Stft&) = delete;

  const StftConfig& config() const { return cfg_; }
  std::size_t frames_for(std::size_t samples) const { return samples / cfg_.hop + 1; }

  /// Needs at least n_fft samples.
  Spectrogram forward(std::span<const double> wave);
  /// `length` is the original sample count.
  Waveform inverse(const Spectrogram& spec, std::size_t length);

 private:
  StftConfig cfg_;
  std::vector<double> window_;
  struct Plans;
  std::unique_ptr<Plans> plans_;
};

/// One-shot helpers around Stft.
Spectrogram stft(std::span<const double> wave, const StftConfig& cfg);
Waveform istft(const Spectrogram& spec, const StftConfig& cfg, std::size_t length);

// ---------------------------------------------------------------------------
// Signals

struct SynthConfig {
  std::uint32_t sample_rate_hz = 8000;
  double f0_min = 90.0;
  double f0_max = 300.0;
  int partials_min = 3;
  int partials_max = 8;
  double partial_decay = 0.7;
  double peak = 0.5;
};

struct CleanSignal {
  Waveform wave;
  double f0 = 0.0;
  int partials = 0;
};

/// Harmonic stack with a slow amplitude envelope, peak-normalized.
CleanSignal synth_clean(Rng& rng, double duration_s, const SynthConfig& cfg);

enum class NoiseFamily : std::uint8_t { pink = 0, burst = 1 };

std::string to_string(NoiseFamily f);
NoiseFamily noise_family_from_string(const std::string& name);

/// Broadband noise with a 1/f power spectrum.
Waveform pink_noise(Rng& rng, std::size_t n);
/// Band-passed Gaussian noise gated by a sharp periodic envelope.
Waveform burst_noise(Rng& rng, std::size_t n, std::uint32_t sample_rate_hz);
Waveform make_noise(NoiseFamily family, Rng& rng, std::size_t n, std::uint32_t sample_rate_hz);

double power(std::span<const double> x);

/// Gain g with 10 log10(P_clean / P_{g noise}) = snr_db. Throws on silent input.
double snr_gain(std::span<const double> clean, std::span<const double> noise, double snr_db);
/// clean + g * noise.
Waveform mix_at_snr(std::span<const double> clean, std::span<const double> noise, double snr_db);
double realized_snr_db(std::span<const double> clean, std::span<const double> scaled_noise);

// ---------------------------------------------------------------------------
// Corpus

enum class Split : std::uint8_t { train = 0, val = 1, test = 2, ood = 3 };

std::string to_string(Split s);
Split split_from_string(const std::string& name);

struct CorpusConfig {
  std::uint64_t seed = 1;
  double duration_s = 0.5;
  /// Pairs drawn for training; a seeded tenth of them becomes validation.
  std::size_t train_pool = 220;
  std::size_t test_count = 80;
  std::size_t ood_count = 80;
  std::vector<double> train_snrs{0.0, 5.0, 10.0, 15.0};
  std::vector<double> test_snrs{2.5, 7.5, 12.5, 17.5};
  NoiseFamily train_noise = NoiseFamily::pink;
  NoiseFamily ood_noise = NoiseFamily::burst;
  SynthConfig synth;

  void validate() const;
};

struct Pair {
  std::string id;
  Split split = Split::train;
  double snr_db = 0.0;
  NoiseFamily noise = NoiseFamily::pink;
  Waveform clean;
  Waveform noisy;
};

/// Clean and noisy spectrograms of one pair.
struct SpectroPair {
  Spectrogram clean;
  Spectrogram noisy;
  double snr_db = 0.0;
  std::string id;
};

struct Corpus {
  std::vector<Pair> pairs;

  std::vector<const Pair*> split(Split s) const;
};

Corpus build_corpus(const CorpusConfig& cfg);
SpectroPair to_spectro(const Pair& pair, Stft& stft);

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestEntry {
  std::string id;
  Split split = Split::train;
  double snr_db = 0.0;
  NoiseFamily noise = NoiseFamily::pink;
  std::string checksum;  ///< FNV-1a of the pair file, 16 hex digits
};

/// Pair container: magic "MSEPAIR\0", u32 version, u8 split, u8 noise, f64 snr,
/// u32 id length + bytes, u64 n, f64 clean[n], f64 noisy[n]. Little-endian.
std::vector<std::uint8_t> encode_pair(const Pair& pair);
Pair decode_pair(const std::vector<std::uint8_t>& bytes);

/// Writes pairs/<id>.bin and manifest.tsv under `dir`; returns the manifest path.
std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
/// Loads every pair listed in the manifest and verifies checksums.
Corpus read_corpus(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Network features

/// Spectrogram <-> network rows. A frame becomes [re_0, im_0, re_1, im_1, ...]
/// times `spec_scale`; `patch_frames` consecutive frames form one row.
struct FeatureConfig {
  double spec_scale = 1.0;
  std::size_t patch_frames = 1;
};

/// Rows of `spec`; trailing frames are zero-padded up to a whole patch.
ad::NdArray to_rows(const Spectrogram& spec, const FeatureConfig& cfg);
/// Inverse of to_rows for a spectrogram with `frames` frames.
Spectrogram from_rows(const ad::NdArray& rows, std::size_t frames, std::size_t bins, const FeatureConfig& cfg);

}  // namespace meanse::frontend
