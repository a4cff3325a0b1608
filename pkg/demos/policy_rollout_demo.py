"""Behavior-clone a reaching policy from scripted demonstrations and
roll it out.

A scripted expert moves an agent straight at the centroid of a named
part ("reach the cap"). We collect a few expert episodes, attach
feature-field observations, train the action-chunk denoiser briefly,
and evaluate on the three generalization splits: OS (same instances,
new poses), OI (new instances), OC (an unseen category).

At this budget the policy masters new poses (OS) and new instances
(OI) but fails on the unseen category (OC): whole-cloud descriptors do
not transfer across shapes, which is exactly the gap a trained feature
field closes. Swap in a trained checkpoint via
field.load_field_checkpoint to see the difference.
"""

from partfield import diffusion, env
from partfield.cli import build_demo_episodes
from partfield.rng import derive_seed

TASKS = [("bottle_with_cap", "cap"), ("pot_with_handle", "handle")]
DEMOS_PER_TASK = 24
STEPS = 3000

pose = env.PoseRanges()
episodes, instance_seeds = build_demo_episodes(TASKS, DEMOS_PER_TASK, 0, pose)
print(f"{len(episodes)} expert episodes, "
      f"{len(episodes[0].chunks)} chunks each")

pipeline = env.FieldPipeline(env.raw_descriptor_codebooks(seed=0))
for ep in episodes:
    pipeline.attach_observations(ep)

schedule = diffusion.make_schedule(50, "linear", 1e-4, 0.02)
config = diffusion.PolicyTrainConfig(steps=STEPS, temperature=0.05,
                                     seed=0)
print(f"training denoiser for {STEPS} steps ...")
params, history = diffusion.train_policy(episodes, schedule, config)
print(f"mse {history[0]['mse']:.4f} -> {history[-1]['mse']:.4f}")

splits = {
    name: env.make_split_tasks(name, TASKS, 5, derive_seed(0, "split", name),
                               train_instance_seeds=instance_seeds,
                               pose_ranges=pose)
    for name in ("OS", "OI", "OC")}
table = env.evaluate_splits(params, pipeline, schedule, splits,
                            "ddim_deterministic", seed=0)
for name in ("OS", "OI", "OC"):
    mean, stderr, n = table[name]
    print(f"{name}: {mean * 100:5.1f}% +- {stderr * 100:.1f}%  ({n} rollouts)")
