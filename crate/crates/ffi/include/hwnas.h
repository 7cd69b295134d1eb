#ifndef HWNAS_H
#define HWNAS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HwnasStatus {
  HWNAS_STATUS_OK = 0,
  HWNAS_STATUS_NULL_POINTER = 1,
  HWNAS_STATUS_INVALID_UTF8 = 2,
  HWNAS_STATUS_INVALID_ARGUMENT = 3,
  HWNAS_STATUS_PARSE = 4,
  HWNAS_STATUS_SHAPE = 5,
  HWNAS_STATUS_IO = 6,
  HWNAS_STATUS_PANIC = 7,
} HwnasStatus;

// A resource estimator (rule-based or linear surrogate).
typedef struct HwnasEstimator HwnasEstimator;

// One architecture genome.
typedef struct HwnasGenome HwnasGenome;

// Parsed network description.
typedef struct HwnasNetwork HwnasNetwork;

// Validated search space.
typedef struct HwnasSpace HwnasSpace;

typedef struct HwnasResourceEstimate {
  double bram;
  double dsp;
  double ff;
  double lut;
  double ii_cycles;
  double latency_cycles;
} HwnasResourceEstimate;

typedef struct HwnasDevice {
  uint64_t lut_capacity;
  uint64_t ff_capacity;
  uint64_t dsp_capacity;
  uint64_t bram_capacity;
  double clock_period_ns;
} HwnasDevice;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static string.
const char *hwnas_version(void);

// Message for the last failure on this thread (empty if none).
const char *hwnas_last_error(void);

// # Safety
// `s` must be NULL or a string returned by this library.
void hwnas_string_free(char *s);

// Parses and shape-checks a network description in JSON.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum HwnasStatus hwnas_network_from_json(const char *json, struct HwnasNetwork **out_net);

// # Safety
// `net` must be a live handle; `out_json` must be writable.
enum HwnasStatus hwnas_network_to_json(const struct HwnasNetwork *net, char **out_json);

// # Safety
// `net` must be NULL or a handle from this library, not used afterwards.
void hwnas_network_free(struct HwnasNetwork *net);

// Copy of `net` with every layer set to the given bit widths.
//
// # Safety
// `net` must be a live handle; `out_net` must be writable.
enum HwnasStatus hwnas_network_with_precision(const struct HwnasNetwork *net,
                                              uint32_t weight_bits,
                                              uint32_t act_bits,
                                              struct HwnasNetwork **out_net);

// # Safety
// `net` must be a live handle; `out_count` must be writable.
enum HwnasStatus hwnas_network_param_count(const struct HwnasNetwork *net, uint64_t *out_count);

// # Safety
// `net` must be a live handle; `out_bops` must be writable.
enum HwnasStatus hwnas_network_bops(const struct HwnasNetwork *net, uint64_t *out_bops);

// The default MLP search space for the given input and class counts.
//
// # Safety
// `out_space` must be writable.
enum HwnasStatus hwnas_space_default(size_t input_dim,
                                     size_t num_classes,
                                     struct HwnasSpace **out_space);

// # Safety
// `json` must be a NUL-terminated string; `out_space` must be writable.
enum HwnasStatus hwnas_space_from_json(const char *json, struct HwnasSpace **out_space);

// # Safety
// `space` must be NULL or a handle from this library, not used afterwards.
void hwnas_space_free(struct HwnasSpace *space);

// Draws a genome uniformly from the space; equal seeds give equal genomes.
//
// # Safety
// `space` must be a live handle; `out_genome` must be writable.
enum HwnasStatus hwnas_space_sample(const struct HwnasSpace *space,
                                    uint64_t seed,
                                    struct HwnasGenome **out_genome);

// # Safety
// `space` and `genome` must be live handles; `out_net` must be writable.
enum HwnasStatus hwnas_space_decode(const struct HwnasSpace *space,
                                    const struct HwnasGenome *genome,
                                    struct HwnasNetwork **out_net);

// # Safety
// `json` must be a NUL-terminated string; `out_genome` must be writable.
enum HwnasStatus hwnas_genome_from_json(const char *json, struct HwnasGenome **out_genome);

// # Safety
// `genome` must be a live handle; `out_json` must be writable.
enum HwnasStatus hwnas_genome_to_json(const struct HwnasGenome *genome, char **out_json);

// Canonical text key of a genome.
//
// # Safety
// `genome` must be a live handle; `out_key` must be writable.
enum HwnasStatus hwnas_genome_key(const struct HwnasGenome *genome, char **out_key);

// # Safety
// `genome` must be NULL or a handle from this library, not used afterwards.
void hwnas_genome_free(struct HwnasGenome *genome);

// Rule-based estimator. `resource_strategy` non-zero keeps weights in BRAM.
//
// # Safety
// `out_est` must be writable.
enum HwnasStatus hwnas_estimator_rule_based(uint32_t reuse_factor,
                                            uint32_t dsp_bit_threshold,
                                            bool resource_strategy,
                                            struct HwnasEstimator **out_est);

// Linear surrogate from a coefficient file.
//
// # Safety
// `path` must be a NUL-terminated string; `out_est` must be writable.
enum HwnasStatus hwnas_estimator_load_linear(const char *path, struct HwnasEstimator **out_est);

// # Safety
// `est` must be NULL or a handle from this library, not used afterwards.
void hwnas_estimator_free(struct HwnasEstimator *est);

// # Safety
// `est` and `net` must be live handles; `out_estimate` must be writable.
enum HwnasStatus hwnas_estimate(const struct HwnasEstimator *est,
                                const struct HwnasNetwork *net,
                                struct HwnasResourceEstimate *out_estimate);

// Virtex UltraScale+ VU13P capacities at a 5 ns clock.
struct HwnasDevice hwnas_device_vu13p(void);

// Mean BRAM/DSP/FF/LUT utilization in percent.
//
// # Safety
// All pointers must be valid.
enum HwnasStatus hwnas_avg_resource_pct(const struct HwnasResourceEstimate *estimate,
                                        const struct HwnasDevice *device,
                                        double *out_pct);

// # Safety
// All pointers must be valid.
enum HwnasStatus hwnas_latency_ns(const struct HwnasResourceEstimate *estimate,
                                  const struct HwnasDevice *device,
                                  double *out_ns);

// Non-dominated ranks of `n` points with `m` objectives each (row-major,
// all minimized). Writes `n` ranks, 0 for the first front.
//
// # Safety
// `points_data` must hold `n * m` doubles and `out_ranks` room for `n`.
enum HwnasStatus hwnas_non_dominated_sort(const double *points_data,
                                          size_t n,
                                          size_t m,
                                          size_t *out_ranks);

// Crowding distances of `n` points forming one front (row-major, all
// minimized). Boundary points get +infinity.
//
// # Safety
// `points_data` must hold `n * m` doubles and `out_distance` room for `n`.
enum HwnasStatus hwnas_crowding_distance(const double *points_data,
                                         size_t n,
                                         size_t m,
                                         double *out_distance);

// Symmetric per-tensor fake quantization to `bits` (2..=16).
//
// # Safety
// `input` and `output` must each hold `n` floats (they may alias);
// `out_scale` may be NULL.
enum HwnasStatus hwnas_fake_quantize(const float *input,
                                     size_t n,
                                     uint32_t bits,
                                     float *output,
                                     float *out_scale);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HWNAS_H */
