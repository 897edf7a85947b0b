#ifndef COLDSENSE_H
#define COLDSENSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsStimulusKind {
  CS_STIMULUS_KIND_S1 = 1,
  CS_STIMULUS_KIND_S2 = 2,
  CS_STIMULUS_KIND_S3 = 3,
} CsStimulusKind;

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_ARGUMENT = 2,
  CS_STATUS_UNREACHABLE_RATE = 3,
  CS_STATUS_CALIBRATION_FAILED = 4,
  CS_STATUS_IO = 5,
  CS_STATUS_BUFFER_TOO_SMALL = 6,
  CS_STATUS_PANIC = 7,
} CsStatus;

typedef enum CsMethod {
  CS_METHOD_KRUSKAL_WALLIS = 1,
  CS_METHOD_WILCOXON_EXACT = 2,
  CS_METHOD_WILCOXON_NORMAL = 3,
} CsMethod;

// Simulated skin patch under the display.
typedef struct CsPlant CsPlant;

// Compiled rate schedule.
typedef struct CsSchedule CsSchedule;

// Logged temperature trace of one closed-loop presentation.
typedef struct CsTrace CsTrace;

typedef struct CsStimulusSpec {
  enum CsStimulusKind kind;
  // °C/s, negative.
  double cooling_rate;
  double cooling_ratio;
  // °C
  double swing;
  // s
  double duration;
  // s
  double drop_duration;
} CsStimulusSpec;

typedef struct CsDerivedPattern {
  double cooling_time;
  double cycle_time;
  double relative_warming_rate;
  double warming_rate;
} CsDerivedPattern;

typedef struct CsSegment {
  double start;
  double end;
  double target_rate;
  bool cold_active;
  bool warm_active;
} CsSegment;

typedef struct CsPlantParams {
  double a_v_true;
  double b_v_true;
  double a_l_true;
  double b_l_true;
  double combined_bias;
  double relax_coeff;
  double t_neutral;
  double t_init;
  double noise_sigma;
} CsPlantParams;

// `rate = a * duty + b` on `[duty_min, duty_max]`.
typedef struct CsDutyModel {
  double a;
  double b;
  double duty_min;
  double duty_max;
  double r_squared;
} CsDutyModel;

typedef struct CsChannelModels {
  struct CsDutyModel valve;
  struct CsDutyModel led;
} CsChannelModels;

typedef struct CsTestResult {
  double statistic;
  // Degrees of freedom, or -1 when the test has none.
  int32_t df;
  double p_value;
  enum CsMethod method;
} CsTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *cs_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *cs_version(void);

// Spec with the default swing, duration and drop length.
struct CsStimulusSpec cs_stimulus_default(enum CsStimulusKind kind,
                                          double cooling_rate,
                                          double cooling_ratio);

// `spec` and `out` must be valid pointers or null.
enum CsStatus cs_derive_pattern(const struct CsStimulusSpec *spec, struct CsDerivedPattern *out);

// `spec` must be valid or null; `out` receives a handle owned by the caller.
enum CsStatus cs_schedule_compile(const struct CsStimulusSpec *spec, struct CsSchedule **out);

// Number of segments, 0 for a null handle.
// `schedule` must be a live handle or null.
size_t cs_schedule_len(const struct CsSchedule *schedule);

// `schedule` must be a live handle; `out` valid or null.
enum CsStatus cs_schedule_segment(const struct CsSchedule *schedule,
                                  size_t index,
                                  struct CsSegment *out);

// Integral of the target rate over the schedule, °C.
// `schedule` must be a live handle; `out` valid or null.
enum CsStatus cs_schedule_integrated_delta(const struct CsSchedule *schedule, double *out);

// `schedule` must come from [`cs_schedule_compile`] and not be used afterwards.
void cs_schedule_free(struct CsSchedule *schedule);

struct CsPlantParams cs_plant_params_default(void);

// Default parameters without relaxation or noise.
struct CsPlantParams cs_plant_params_affine(void);

// `params` must be valid or null; `out` receives a handle owned by the caller.
enum CsStatus cs_plant_new(const struct CsPlantParams *params, uint64_t seed, struct CsPlant **out);

// Advance the plant by one Euler step of `dt` seconds.
// `plant` must be a live handle or null.
enum CsStatus cs_plant_step(struct CsPlant *plant,
                            double duty_valve,
                            double duty_led,
                            bool valve_on,
                            bool led_on,
                            double dt);

// True skin temperature, °C.
// `plant` must be a live handle; `out` valid or null.
enum CsStatus cs_plant_temperature(const struct CsPlant *plant, double *out);

// Simulated time since creation, s.
// `plant` must be a live handle; `out` valid or null.
enum CsStatus cs_plant_time(const struct CsPlant *plant, double *out);

// Temperature quantized to `resolution` °C.
// `plant` must be a live handle; `out` valid or null.
enum CsStatus cs_plant_read_sensor(const struct CsPlant *plant, double resolution, double *out);

// `plant` must come from [`cs_plant_new`] and not be used afterwards.
void cs_plant_free(struct CsPlant *plant);

// Models matching a plant's hidden truth, ignoring relaxation.
// `params` and `out` must be valid or null.
enum CsStatus cs_models_exact(const struct CsPlantParams *params, struct CsChannelModels *out);

// Calibrate both channels against a fresh plant with the default protocol.
// `iterations` may be null.
// Pointers must be valid or null.
enum CsStatus cs_calibrate(const struct CsPlantParams *params,
                           uint64_t seed,
                           struct CsChannelModels *out,
                           size_t *iterations);

// Render `schedule` with `models` and drive a fresh plant through it.
// Pointers must be valid or null; `out` receives a handle owned by the caller.
enum CsStatus cs_simulate(const struct CsSchedule *schedule,
                          const struct CsChannelModels *models,
                          const struct CsPlantParams *params,
                          uint64_t seed,
                          double dt,
                          double log_rate,
                          struct CsTrace **out);

// Number of logged samples, 0 for a null handle.
// `trace` must be a live handle or null.
size_t cs_trace_len(const struct CsTrace *trace);

// Net temperature change from start to end, °C.
// `trace` must be a live handle; `out` valid or null.
enum CsStatus cs_trace_net_delta(const struct CsTrace *trace, double *out);

// Copy the logged temperatures into `buf`. Fails with `BufferTooSmall`
// when `capacity` is less than [`cs_trace_len`].
// `buf` must hold `capacity` doubles.
enum CsStatus cs_trace_temperatures(const struct CsTrace *trace, double *buf, size_t capacity);

// `trace` must come from [`cs_simulate`] and not be used afterwards.
void cs_trace_free(struct CsTrace *trace);

// Kruskal-Wallis H over groups laid out back to back in `values`;
// `group_sizes` holds `n_groups` lengths summing to the total.
// `values` must hold the summed group sizes; `group_sizes` must hold `n_groups` entries.
enum CsStatus cs_kruskal_wallis(const double *values,
                                const size_t *group_sizes,
                                size_t n_groups,
                                struct CsTestResult *out);

// Wilcoxon rank-sum test; the statistic is U for `a`.
// `a` and `b` must hold `na` and `nb` doubles.
enum CsStatus cs_wilcoxon_rank_sum(const double *a,
                                   size_t na,
                                   const double *b,
                                   size_t nb,
                                   struct CsTestResult *out);

// Benjamini-Hochberg adjusted p-values, written to `out` in input order.
// `p_values` and `out` must each hold `n` doubles.
enum CsStatus cs_benjamini_hochberg(const double *p_values, size_t n, double *out);

// Upper tail of the chi-square distribution.
// `out` must be valid or null.
enum CsStatus cs_chi_square_sf(double x, uint32_t df, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLDSENSE_H */
