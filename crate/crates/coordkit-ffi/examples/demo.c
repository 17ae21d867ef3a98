/* Minimal C consumer: load a builtin scenario, check feasibility, run it.
 *
 * Build (from the repository root):
 *   cargo build --release -p coordkit-ffi
 *   cc crates/coordkit-ffi/examples/demo.c \
 *      -Icrates/coordkit-ffi/include \
 *      target/release/libcoordkit_ffi.a -lm -o demo
 */
#include <stdio.h>
#include "coordkit.h"

int main(void) {
    printf("coordkit %s\n", ck_version());

    CkScenario *scenario = NULL;
    if (ck_scenario_load("two_unicycles_distance", &scenario) != CK_OK) {
        fprintf(stderr, "load failed: %s\n", ck_last_error());
        return 1;
    }

    CkFeasibility feas;
    CkStatus status = ck_check(scenario, &feas);
    printf("feasible=%d rank=%zu augmented=%zu kappa=%zu\n",
           feas.feasible, feas.rank_omega, feas.rank_augmented, feas.kappa);
    if (status != CK_OK) {
        fprintf(stderr, "check: %s\n", ck_last_error());
        ck_scenario_free(scenario);
        return 2;
    }

    CkRunStats stats;
    status = ck_run(scenario, "/tmp/ck_demo.csv", NULL, 1e-3, &stats);
    printf("samples=%zu violations=%zu cone_failures=%zu clean=%d\n",
           stats.samples, stats.violations, stats.cone_failures, stats.clean);
    ck_scenario_free(scenario);
    return status == CK_OK && stats.clean ? 0 : 3;
}
