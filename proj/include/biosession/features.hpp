#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "biosession/session.hpp"

namespace biosession::features {

struct DescriptiveStats {
    double mean = 0.0;
    double sd = 0.0;       // sample SD (n-1)
    double cv = 0.0;       // sd/mean, meaningful only when cv_defined
    double kurtosis = 0.0; // Fisher excess
    bool cv_defined = true;
};

DescriptiveStats descriptive(std::span<const double> series);

/// Time-domain HRV indices over successive differences d_i. rmssd and sdsd
/// use the 1/m denominator over the m = n-1 differences, which makes
/// rmssd^2 = sdsd^2 + mean(d)^2 an exact identity; sdnn is the sample SD of
/// the intervals. pnn50 counts |d| strictly greater than 50 ms.
struct HrvTime {
    double sdnn = 0.0;
    double sdsd = 0.0;
    double rmssd = 0.0;
    double pnn50 = 0.0; // percent
};

HrvTime hrv_time(std::span<const double> rr_ms);

struct Spectrum {
    std::vector<double> freqs;
    std::vector<double> density; // one-sided PSD, units^2 per Hz
    int seg_len = 0;
    bool short_segment = false; // series shorter than the nominal window
};

/// Welch PSD: Hann-tapered, constant-detrended segments with 50% overlap;
/// densities scaled so sum(density * df) matches the series variance.
Spectrum welch_psd(std::span<const double> x, double fs = 1.0, int seg_len = 256,
                   double overlap = 0.5);

struct SpectralPowers {
    double tp = 0.0;
    double lf = 0.0; // [0.04, 0.15) Hz
    double hf = 0.0; // [0.15, 0.40) Hz
    double lf_hf = 0.0;
    bool lf_hf_defined = true;
};

inline constexpr double kLfLowHz = 0.04;
inline constexpr double kLfHighHz = 0.15;
inline constexpr double kHfHighHz = 0.40;

SpectralPowers band_powers(const Spectrum& spectrum);

/// Savitzky-Golay smoothing; window is given in samples of a 1 Hz series
/// (seconds), forced odd. Edges use the polynomial fit on the truncated
/// window, so polynomials up to poly_order are reproduced exactly everywhere.
std::vector<double> savgol(std::span<const double> series, int window_s = 30,
                           int poly_order = 5);

struct RespirationPeaks {
    std::vector<int> indices; // strictly increasing
    std::vector<double> prominences;
    std::vector<double> widths_s; // at half prominence
    double prate = 0.0;           // peaks per minute
    double mean_prominence = 0.0;
    double mean_width = 0.0;
};

/// Local maxima filtered on the input series' own scale: peak relief
/// (height above the higher adjacent valley) >= height_k * SD and
/// topographic prominence >= prominence_k * SD. Series is treated as 1 Hz.
RespirationPeaks find_peaks(std::span<const double> series, double height_k = 2.0,
                            double prominence_k = 0.5);

/// Closed registry of the 23 physiological feature names, fixed order.
const std::vector<std::string>& feature_registry();

struct FeatureVector {
    std::string segment_label;
    double duration_s = 0.0;
    bool welch_short_segment = false;
    std::map<std::string, double> values; // keys from feature_registry() only
};

enum class SegmentMode { Session, Scenario };

/// One FeatureVector per segment. Session mode covers the post-baseline
/// activity window; Scenario mode emits one vector per non-Baseline phase.
/// Absent signals yield absent keys. BF runs savgol -> find_peaks; RR
/// spectral features come from Welch on the 1 Hz tachogram.
std::vector<FeatureVector> session_features(const Session& preprocessed, SegmentMode mode);

} // namespace biosession::features
