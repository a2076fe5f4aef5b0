"""Random real trees by recursive uniform gluing of branches.

Simulation library and CLI: builds the glued trees, evaluates the exact
distributional formulas attached to them (typical height, two-point
distance, mass martingales) and estimates geometric quantities
(covering dimension, stem scaling) at desk scale.
"""

from .errors import FileFormatError, LocationError, ParameterError
from .sequences import (BranchLengthSequence, ExponentFit, SeriesDiagnostics,
                        explicit, fit_exponent, from_file, generate, h_of_a,
                        log_power, parse_sequence_spec, poisson_intervals,
                        power_law, series_diagnostics, spiked, tail_h)
from .streams import as_generator, substream
from .tracked import (HeightSampleBatch, MgfBoundCheck, TrackedBuild,
                      build_with_tracked_point, exp_bound_check,
                      freeze_fraction_mc, height_log_mgf, height_mgf,
                      sample_height_law, sample_height_law_batch,
                      truncation_index)
from .tree import (PointLocation, Tree, build_tree, distance, export_tree,
                   export_tree_text, hang_points, height, import_tree,
                   longest_stem, max_height, pairwise_distance, project,
                   root_path, sample_uniform, sample_uniform_batch,
                   stem_gaps, subtree_length)
from .twopoint import (TailExponentFit, TwoPointLaw, empirical_D,
                       exact_mean_D, mixture_weights, negative_moment_mc,
                       sample_D, sample_D_batch, tail_exponent)
from .diagnostics import (BoxDimensionResult, CoveringEntry, CoveringProfile,
                          GoodBranchStats, ProbeResult, UrnEnsemble,
                          UrnTrajectory, boundedness_probe, box_dimension,
                          covering_profile, farthest_point_radii,
                          good_branch_stats, lp_projected_distance,
                          net_counts, track_mass, urn_ensemble, urn_simulate)

__version__ = "0.1.0"
